// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/crypto.hpp"
#include "vmsentry/detection.hpp"
#include "vmsentry/domain.hpp"
#include "vmsentry/evidence.hpp"

#include <json.hpp>

namespace vmsentry {

// JSON converters for domain values as they travel in wire messages and
// evidence bundles. nlohmann's default object keeps keys sorted, so dumping
// these is the canonical encoding. Byte fields are hex strings, ticks and
// versions plain integers.
//
// The *_from_json functions throw nlohmann::json::exception or BadHex on
// malformed input; frame decoding maps both to MalformedPayload.

nlohmann::json image_to_json(const VmImage& img);
VmImage image_from_json(const nlohmann::json& j);

nlohmann::json profile_to_json(const NodeProfile& p);
NodeProfile profile_from_json(const nlohmann::json& j);

nlohmann::json component_to_json(const SecurityComponentDescriptor& c);
SecurityComponentDescriptor component_from_json(const nlohmann::json& j);

nlohmann::json token_to_json(const AccessToken& t);
AccessToken token_from_json(const nlohmann::json& j);

nlohmann::json custody_to_json(const CustodyRecord& r);
CustodyRecord custody_from_json(const nlohmann::json& j);

nlohmann::json verdict_to_json(const Verdict& v);
Verdict verdict_from_json(const nlohmann::json& j);

nlohmann::json bundle_to_json(const EvidenceBundle& b);
EvidenceBundle bundle_from_json(const nlohmann::json& j);

} // namespace vmsentry
