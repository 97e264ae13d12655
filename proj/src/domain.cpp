// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/domain.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace vmsentry {

std::string_view vm_kind_name(VmKind k) {
    return k == VmKind::GuestOs ? "GuestOs" : "SecurityEnv";
}

std::optional<VmKind> vm_kind_from_name(std::string_view name) {
    if (name == "GuestOs") return VmKind::GuestOs;
    if (name == "SecurityEnv") return VmKind::SecurityEnv;
    return std::nullopt;
}

std::string_view vm_state_name(VmState s) {
    switch (s) {
    case VmState::Provisioned: return "Provisioned";
    case VmState::Running: return "Running";
    case VmState::Halted: return "Halted";
    case VmState::Quarantined: return "Quarantined";
    case VmState::Retired: return "Retired";
    }
    return "?";
}

std::string_view vm_event_name(VmEvent e) {
    switch (e) {
    case VmEvent::Start: return "Start";
    case VmEvent::InfectionDetected: return "InfectionDetected";
    case VmEvent::SnapshotTaken: return "SnapshotTaken";
    case VmEvent::Replace: return "Replace";
    }
    return "?";
}

IllegalTransition::IllegalTransition(VmState s, VmEvent e)
    : std::runtime_error("illegal transition: " + std::string(vm_state_name(s)) + " on " +
                         std::string(vm_event_name(e))) {}

VmState transition(VmState state, VmEvent event) {
    if (state == VmState::Provisioned && event == VmEvent::Start)
        return VmState::Running;
    if (state == VmState::Running && event == VmEvent::InfectionDetected)
        return VmState::Halted;
    if (state == VmState::Halted && event == VmEvent::SnapshotTaken)
        return VmState::Quarantined;
    if (state == VmState::Quarantined && event == VmEvent::Replace)
        return VmState::Retired;
    if (state == VmState::Running && event == VmEvent::Replace)
        return VmState::Retired;
    throw IllegalTransition(state, event);
}

// ---------------------------------------------------------------------------

VmImage make_signed_image(std::string image_id, VmKind kind, Bytes payload,
                          std::vector<std::string> app_manifest, const KeyPair& publisher_key) {
    VmImage img;
    img.image_id = std::move(image_id);
    img.kind = kind;
    img.payload = std::move(payload);
    img.app_manifest = std::move(app_manifest);
    img.content_hash = sha256(img.payload);
    img.signature = sign(publisher_key.private_key,
                         ByteView(img.content_hash.data(), img.content_hash.size()));
    return img;
}

bool check_integrity(const VmImage& image, const Bytes& publisher_public_key) {
    if (sha256(image.payload) != image.content_hash)
        return false;
    try {
        return verify(publisher_public_key,
                      ByteView(image.content_hash.data(), image.content_hash.size()),
                      image.signature);
    } catch (const MalformedKey&) {
        return false;
    }
}

// ---------------------------------------------------------------------------

std::string_view stack_violation_name(StackViolation v) {
    switch (v) {
    case StackViolation::MissingSecurityVm: return "MissingSecurityVm";
    case StackViolation::DuplicateVmId: return "DuplicateVmId";
    case StackViolation::CoreImageHashMismatch: return "CoreImageHashMismatch";
    case StackViolation::CoreImageBadSignature: return "CoreImageBadSignature";
    case StackViolation::GuestImageHashMismatch: return "GuestImageHashMismatch";
    case StackViolation::GuestImageBadSignature: return "GuestImageBadSignature";
    case StackViolation::SecurityImageHashMismatch: return "SecurityImageHashMismatch";
    case StackViolation::SecurityImageBadSignature: return "SecurityImageBadSignature";
    }
    return "?";
}

bool ValidationReport::contains(StackViolation v) const {
    return std::find(violations.begin(), violations.end(), v) != violations.end();
}

static void check_image(const VmImage& img, const Bytes& publisher_pk, ValidationReport& report,
                        StackViolation hash_violation, StackViolation sig_violation) {
    if (sha256(img.payload) != img.content_hash) {
        report.violations.push_back(hash_violation);
        return; // signature over a wrong hash is reported as the hash problem
    }
    bool sig_ok = false;
    try {
        sig_ok = verify(publisher_pk, ByteView(img.content_hash.data(), img.content_hash.size()),
                        img.signature);
    } catch (const MalformedKey&) {
        sig_ok = false;
    }
    if (!sig_ok)
        report.violations.push_back(sig_violation);
}

ValidationReport validate_stack(const LayerStack& stack, const Bytes& publisher_public_key) {
    ValidationReport report;
    if (!stack.security_vm.has_value())
        report.violations.push_back(StackViolation::MissingSecurityVm);

    std::set<std::string> seen;
    auto note_id = [&](const std::string& id) {
        if (!seen.insert(id).second &&
            !report.contains(StackViolation::DuplicateVmId))
            report.violations.push_back(StackViolation::DuplicateVmId);
    };
    for (const VmInstance& g : stack.guest_vms)
        note_id(g.vm_id);
    if (stack.security_vm)
        note_id(stack.security_vm->vm_id);

    check_image(stack.core_image, publisher_public_key, report,
                StackViolation::CoreImageHashMismatch, StackViolation::CoreImageBadSignature);
    for (const VmInstance& g : stack.guest_vms)
        check_image(g.image, publisher_public_key, report,
                    StackViolation::GuestImageHashMismatch,
                    StackViolation::GuestImageBadSignature);
    if (stack.security_vm)
        check_image(stack.security_vm->image, publisher_public_key, report,
                    StackViolation::SecurityImageHashMismatch,
                    StackViolation::SecurityImageBadSignature);
    return report;
}

// ---------------------------------------------------------------------------

std::string_view node_class_name(NodeClass c) {
    switch (c) {
    case NodeClass::Desktop: return "Desktop";
    case NodeClass::ThinClient: return "ThinClient";
    case NodeClass::MobileHandheld: return "MobileHandheld";
    }
    return "?";
}

std::optional<NodeClass> node_class_from_name(std::string_view name) {
    for (NodeClass c : {NodeClass::Desktop, NodeClass::ThinClient, NodeClass::MobileHandheld})
        if (node_class_name(c) == name)
            return c;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// VMIMG1 fixture files

void save_image_file(const std::filesystem::path& path, const VmImage& image) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw BadImageFile("cannot open for write: " + path.string());
    out << "VMIMG1\n";
    out << vm_kind_name(image.kind) << "\n";
    out << image.image_id << "\n";
    for (std::size_t i = 0; i < image.app_manifest.size(); ++i)
        out << (i ? "," : "") << image.app_manifest[i];
    out << "\n";
    out << to_hex(image.content_hash) << "\n";
    out << to_hex(image.signature) << "\n";
    out.write(reinterpret_cast<const char*>(image.payload.data()),
              static_cast<std::streamsize>(image.payload.size()));
    if (!out)
        throw BadImageFile("write failed: " + path.string());
}

static std::vector<std::string> split_commas(const std::string& line) {
    std::vector<std::string> out;
    if (line.empty())
        return out;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(item);
    return out;
}

VmImage load_image_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw BadImageFile("cannot open: " + path.string());
    std::string magic, kind_line, id_line, manifest_line, hash_line, sig_line;
    if (!std::getline(in, magic) || magic != "VMIMG1")
        throw BadImageFile("bad magic in " + path.string());
    if (!std::getline(in, kind_line) || !std::getline(in, id_line) ||
        !std::getline(in, manifest_line) || !std::getline(in, hash_line) ||
        !std::getline(in, sig_line))
        throw BadImageFile("truncated header in " + path.string());

    VmImage img;
    auto kind = vm_kind_from_name(kind_line);
    if (!kind)
        throw BadImageFile("unknown kind '" + kind_line + "' in " + path.string());
    img.kind = *kind;
    img.image_id = id_line;
    img.app_manifest = split_commas(manifest_line);
    try {
        img.content_hash = digest_from_hex(hash_line);
        img.signature = from_hex(sig_line);
    } catch (const BadHex& e) {
        throw BadImageFile(std::string(e.what()) + " in " + path.string());
    }
    img.payload.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    return img;
}

} // namespace vmsentry
