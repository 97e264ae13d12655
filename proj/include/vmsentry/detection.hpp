// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/crypto.hpp"

#include <optional>
#include <vector>

namespace vmsentry {

// A byte window a guard carved out of a running guest.
struct Observation {
    std::string vm_id;
    Tick tick = 0;
    Resource resource = Resource::GuestMemory;
    Bytes data;
};

struct SignatureRule {
    std::string rule_id;
    Bytes pattern; // >= 4 bytes
    std::string description;
};

struct BadRuleset : std::runtime_error {
    explicit BadRuleset(const std::string& what) : std::runtime_error(what) {}
};

struct Ruleset {
    std::vector<SignatureRule> rules;
    const SignatureRule* find(std::string_view rule_id) const;
};

// One rule per line: rule_id<TAB>hex_pattern<TAB>description.
// Blank lines and lines starting with '#' are skipped.
Ruleset parse_ruleset(std::string_view text);
std::string serialize_ruleset(const Ruleset& rs);

struct Verdict {
    enum class Kind { Clean, Infected };
    Kind kind = Kind::Clean;
    std::string cause; // rule_id or formatted anomaly score; empty iff Clean

    bool infected() const { return kind == Kind::Infected; }
    static Verdict clean() { return {}; }
    static Verdict infected_by(std::string cause) { return {Kind::Infected, std::move(cause)}; }
};

bool operator==(const Verdict& a, const Verdict& b);

// First match in (rule order, lowest offset) wins.
Verdict signature_scan(const Observation& obs, const Ruleset& ruleset);

// Byte-frequency Shannon entropy of the window, in bits/byte. Empty data scores 0.
double shannon_entropy_bits_per_byte(ByteView data);

// Infected iff entropy > threshold; requires 0 < threshold <= 8.
Verdict anomaly_scan(const Observation& obs, double threshold);

} // namespace vmsentry
