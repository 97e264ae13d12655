// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/domain.hpp"

#include <filesystem>
#include <map>

namespace vmsentry {

std::string manifest_key(const std::vector<std::string>& app_manifest);

struct ComponentCatalog {
    std::vector<SecurityComponentDescriptor> entries;
    std::map<std::string, VmImage> clean_guest_images; // keyed by manifest_key
    VmImage security_env_image; // payload carries the signature ruleset
    VmImage core_image;         // known-good layer-two image for node stacks

    const SecurityComponentDescriptor* find(std::string_view component_id) const;
};

// Selection outcome: minimum total (cpu+mem) cost subset that covers every
// required capability within both budgets, ties broken by the lexicographically
// smallest sorted component_id sequence. Exhaustive up to kExhaustiveLimit
// catalog entries; greedy cost-per-uncovered-capability above that.
inline constexpr std::size_t kExhaustiveSelectionLimit = 12;

struct SelectionResult {
    bool feasible = false;
    std::vector<SecurityComponentDescriptor> components; // sorted by component_id

    std::int64_t total_cpu() const;
    std::int64_t total_mem() const;
};

SelectionResult select_components(const NodeProfile& profile, const ComponentCatalog& catalog);

// ---------------------------------------------------------------------------
// Catalog directory layout:
//   components.tsv  component_id \t version \t caps(comma) \t cpu \t mem \t pubkey_hex
//   ruleset.tsv     signature ruleset (also baked into security.img payload)
//   security.img, core.img, clean/<manifest key>.img   (VMIMG1 files)

struct BadCatalog : std::runtime_error {
    explicit BadCatalog(const std::string& what) : std::runtime_error(what) {}
};

void write_catalog(const std::filesystem::path& dir, const ComponentCatalog& catalog);
ComponentCatalog load_catalog(const std::filesystem::path& dir);

} // namespace vmsentry
