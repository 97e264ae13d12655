// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/json_io.hpp"

namespace vmsentry {

using nlohmann::json;

static json hex_of(ByteView b) {
    return to_hex(b);
}

static Bytes bytes_of(const json& j) {
    return from_hex(j.get<std::string>());
}

static std::string enum_str(std::string_view s) {
    return std::string(s);
}

json image_to_json(const VmImage& img) {
    json j;
    j["image_id"] = img.image_id;
    j["kind"] = enum_str(vm_kind_name(img.kind));
    j["payload"] = hex_of(img.payload);
    j["content_hash"] = to_hex(img.content_hash);
    j["signature"] = hex_of(img.signature);
    j["app_manifest"] = img.app_manifest;
    return j;
}

VmImage image_from_json(const json& j) {
    VmImage img;
    img.image_id = j.at("image_id").get<std::string>();
    auto kind = vm_kind_from_name(j.at("kind").get<std::string>());
    if (!kind)
        throw BadHex("unknown vm kind"); // surfaces as malformed payload
    img.kind = *kind;
    img.payload = bytes_of(j.at("payload"));
    img.content_hash = digest_from_hex(j.at("content_hash").get<std::string>());
    img.signature = bytes_of(j.at("signature"));
    img.app_manifest = j.at("app_manifest").get<std::vector<std::string>>();
    return img;
}

json profile_to_json(const NodeProfile& p) {
    json j;
    j["node_id"] = p.node_id;
    j["node_class"] = enum_str(node_class_name(p.node_class));
    j["cpu_budget"] = p.cpu_budget;
    j["mem_budget"] = p.mem_budget;
    j["required_capabilities"] = p.required_capabilities; // set: sorted
    return j;
}

NodeProfile profile_from_json(const json& j) {
    NodeProfile p;
    p.node_id = j.at("node_id").get<std::string>();
    auto cls = node_class_from_name(j.at("node_class").get<std::string>());
    if (!cls)
        throw BadHex("unknown node class");
    p.node_class = *cls;
    p.cpu_budget = j.at("cpu_budget").get<std::int64_t>();
    p.mem_budget = j.at("mem_budget").get<std::int64_t>();
    p.required_capabilities = j.at("required_capabilities").get<std::set<CapabilityTag>>();
    return p;
}

json component_to_json(const SecurityComponentDescriptor& c) {
    json j;
    j["component_id"] = c.component_id;
    j["version"] = c.version;
    j["capabilities"] = c.capabilities;
    j["cpu_cost"] = c.cpu_cost;
    j["mem_cost"] = c.mem_cost;
    j["public_key"] = hex_of(c.public_key);
    return j;
}

SecurityComponentDescriptor component_from_json(const json& j) {
    SecurityComponentDescriptor c;
    c.component_id = j.at("component_id").get<std::string>();
    c.version = j.at("version").get<std::uint64_t>();
    c.capabilities = j.at("capabilities").get<std::set<CapabilityTag>>();
    c.cpu_cost = j.at("cpu_cost").get<std::int64_t>();
    c.mem_cost = j.at("mem_cost").get<std::int64_t>();
    c.public_key = bytes_of(j.at("public_key"));
    return c;
}

json token_to_json(const AccessToken& t) {
    json j;
    j["component_id"] = t.component_id;
    j["resource"] = enum_str(resource_name(t.resource));
    j["expiry_tick"] = t.expiry_tick;
    j["signature"] = hex_of(t.signature);
    return j;
}

AccessToken token_from_json(const json& j) {
    AccessToken t;
    t.component_id = j.at("component_id").get<std::string>();
    auto r = resource_from_name(j.at("resource").get<std::string>());
    if (!r)
        throw BadHex("unknown resource");
    t.resource = *r;
    t.expiry_tick = j.at("expiry_tick").get<Tick>();
    t.signature = bytes_of(j.at("signature"));
    return t;
}

json custody_to_json(const CustodyRecord& r) {
    json j;
    j["actor"] = r.actor;
    j["actor_public_key"] = hex_of(r.actor_public_key);
    j["action"] = enum_str(custody_action_name(r.action));
    j["tick"] = r.tick;
    j["prev_hash"] = to_hex(r.prev_hash);
    j["signature"] = hex_of(r.signature);
    return j;
}

CustodyRecord custody_from_json(const json& j) {
    CustodyRecord r;
    r.actor = j.at("actor").get<std::string>();
    r.actor_public_key = bytes_of(j.at("actor_public_key"));
    auto a = custody_action_from_name(j.at("action").get<std::string>());
    if (!a)
        throw BadHex("unknown custody action");
    r.action = *a;
    r.tick = j.at("tick").get<Tick>();
    r.prev_hash = digest_from_hex(j.at("prev_hash").get<std::string>());
    r.signature = bytes_of(j.at("signature"));
    return r;
}

json verdict_to_json(const Verdict& v) {
    json j;
    j["kind"] = v.infected() ? "Infected" : "Clean";
    j["cause"] = v.cause;
    return j;
}

Verdict verdict_from_json(const json& j) {
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "Clean")
        return Verdict::clean();
    if (kind == "Infected")
        return Verdict::infected_by(j.at("cause").get<std::string>());
    throw BadHex("unknown verdict kind");
}

json bundle_to_json(const EvidenceBundle& b) {
    json meta;
    meta["node_id"] = b.meta.node_id;
    meta["vm_id"] = b.meta.vm_id;
    meta["halt_tick"] = b.meta.halt_tick;
    meta["verdict"] = verdict_to_json(b.meta.verdict);
    meta["app_manifest"] = b.meta.app_manifest;

    json custody = json::array();
    for (const CustodyRecord& r : b.custody)
        custody.push_back(custody_to_json(r));

    json j;
    j["snapshot"] = hex_of(b.snapshot);
    j["meta"] = meta;
    j["custody"] = custody;
    return j;
}

EvidenceBundle bundle_from_json(const json& j) {
    EvidenceBundle b;
    b.snapshot = bytes_of(j.at("snapshot"));
    const json& meta = j.at("meta");
    b.meta.node_id = meta.at("node_id").get<std::string>();
    b.meta.vm_id = meta.at("vm_id").get<std::string>();
    b.meta.halt_tick = meta.at("halt_tick").get<Tick>();
    b.meta.verdict = verdict_from_json(meta.at("verdict"));
    b.meta.app_manifest = meta.at("app_manifest").get<std::vector<std::string>>();
    for (const json& r : j.at("custody"))
        b.custody.push_back(custody_from_json(r));
    return b;
}

} // namespace vmsentry
