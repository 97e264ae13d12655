// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

namespace vmsentry {

namespace fs = std::filesystem;

std::string manifest_key(const std::vector<std::string>& app_manifest) {
    std::vector<std::string> sorted = app_manifest;
    std::sort(sorted.begin(), sorted.end());
    std::string key;
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i)
            key += ',';
        key += sorted[i];
    }
    return key;
}

const SecurityComponentDescriptor* ComponentCatalog::find(std::string_view component_id) const {
    for (const auto& c : entries)
        if (c.component_id == component_id)
            return &c;
    return nullptr;
}

std::int64_t SelectionResult::total_cpu() const {
    return std::accumulate(components.begin(), components.end(), std::int64_t{0},
                           [](std::int64_t a, const auto& c) { return a + c.cpu_cost; });
}

std::int64_t SelectionResult::total_mem() const {
    return std::accumulate(components.begin(), components.end(), std::int64_t{0},
                           [](std::int64_t a, const auto& c) { return a + c.mem_cost; });
}

namespace {

struct Candidate {
    std::int64_t cost = 0;
    std::vector<std::string> ids; // sorted

    bool better_than(const Candidate& other) const {
        if (cost != other.cost)
            return cost < other.cost;
        return ids < other.ids;
    }
};

bool covers(const std::set<CapabilityTag>& required,
            const std::vector<const SecurityComponentDescriptor*>& subset) {
    std::set<CapabilityTag> have;
    for (const auto* c : subset)
        have.insert(c->capabilities.begin(), c->capabilities.end());
    return std::includes(have.begin(), have.end(), required.begin(), required.end());
}

SelectionResult exhaustive_select(const NodeProfile& profile,
                                  const std::vector<const SecurityComponentDescriptor*>& pool) {
    const std::size_t n = pool.size();
    std::optional<Candidate> best;
    std::vector<const SecurityComponentDescriptor*> best_subset;
    for (std::uint64_t mask = 0; mask < (1ull << n); ++mask) {
        std::vector<const SecurityComponentDescriptor*> subset;
        std::int64_t cpu = 0, mem = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (mask & (1ull << i)) {
                subset.push_back(pool[i]);
                cpu += pool[i]->cpu_cost;
                mem += pool[i]->mem_cost;
            }
        }
        if (cpu > profile.cpu_budget || mem > profile.mem_budget)
            continue;
        if (!covers(profile.required_capabilities, subset))
            continue;
        Candidate cand;
        cand.cost = cpu + mem;
        for (const auto* c : subset)
            cand.ids.push_back(c->component_id);
        std::sort(cand.ids.begin(), cand.ids.end());
        if (!best || cand.better_than(*best)) {
            best = cand;
            best_subset = subset;
        }
    }
    SelectionResult result;
    if (!best)
        return result;
    result.feasible = true;
    for (const auto* c : best_subset)
        result.components.push_back(*c);
    std::sort(result.components.begin(), result.components.end(),
              [](const auto& a, const auto& b) { return a.component_id < b.component_id; });
    return result;
}

// Approximate path for large catalogs: repeatedly take the component with the
// lowest cost per newly covered capability that still fits both budgets.
SelectionResult greedy_select(const NodeProfile& profile,
                              std::vector<const SecurityComponentDescriptor*> pool) {
    std::sort(pool.begin(), pool.end(),
              [](const auto* a, const auto* b) { return a->component_id < b->component_id; });
    std::set<CapabilityTag> uncovered = profile.required_capabilities;
    std::int64_t cpu = 0, mem = 0;
    std::vector<const SecurityComponentDescriptor*> chosen;
    std::vector<bool> used(pool.size(), false);
    while (!uncovered.empty()) {
        double best_ratio = 0;
        std::size_t best_i = pool.size();
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (used[i])
                continue;
            const auto* c = pool[i];
            if (cpu + c->cpu_cost > profile.cpu_budget || mem + c->mem_cost > profile.mem_budget)
                continue;
            std::size_t gain = 0;
            for (const auto& tag : c->capabilities)
                gain += uncovered.count(tag);
            if (gain == 0)
                continue;
            double ratio =
                static_cast<double>(c->cpu_cost + c->mem_cost) / static_cast<double>(gain);
            if (best_i == pool.size() || ratio < best_ratio) {
                best_ratio = ratio;
                best_i = i;
            }
        }
        if (best_i == pool.size())
            return {}; // nothing fits: give up (greedy regime is documented as approximate)
        used[best_i] = true;
        chosen.push_back(pool[best_i]);
        cpu += pool[best_i]->cpu_cost;
        mem += pool[best_i]->mem_cost;
        for (const auto& tag : pool[best_i]->capabilities)
            uncovered.erase(tag);
    }
    SelectionResult result;
    result.feasible = true;
    for (const auto* c : chosen)
        result.components.push_back(*c);
    std::sort(result.components.begin(), result.components.end(),
              [](const auto& a, const auto& b) { return a.component_id < b.component_id; });
    return result;
}

} // namespace

SelectionResult select_components(const NodeProfile& profile, const ComponentCatalog& catalog) {
    std::vector<const SecurityComponentDescriptor*> pool;
    for (const auto& c : catalog.entries)
        pool.push_back(&c);
    // Deterministic for identical inputs regardless of entry order.
    std::sort(pool.begin(), pool.end(),
              [](const auto* a, const auto* b) { return a->component_id < b->component_id; });
    if (pool.size() <= kExhaustiveSelectionLimit)
        return exhaustive_select(profile, pool);
    return greedy_select(profile, std::move(pool));
}

// ---------------------------------------------------------------------------

static std::string caps_csv(const std::set<CapabilityTag>& caps) {
    std::string out;
    for (const auto& c : caps) {
        if (!out.empty())
            out += ',';
        out += c;
    }
    return out;
}

void write_catalog(const fs::path& dir, const ComponentCatalog& catalog) {
    fs::create_directories(dir / "clean");
    {
        std::ofstream out(dir / "components.tsv", std::ios::trunc);
        if (!out)
            throw BadCatalog("cannot write components.tsv in " + dir.string());
        for (const auto& c : catalog.entries)
            out << c.component_id << '\t' << c.version << '\t' << caps_csv(c.capabilities)
                << '\t' << c.cpu_cost << '\t' << c.mem_cost << '\t' << to_hex(c.public_key)
                << '\n';
    }
    {
        std::ofstream out(dir / "ruleset.tsv", std::ios::binary | std::ios::trunc);
        out.write(reinterpret_cast<const char*>(catalog.security_env_image.payload.data()),
                  static_cast<std::streamsize>(catalog.security_env_image.payload.size()));
    }
    save_image_file(dir / "security.img", catalog.security_env_image);
    save_image_file(dir / "core.img", catalog.core_image);
    for (const auto& [key, img] : catalog.clean_guest_images) {
        std::string name = key;
        std::replace(name.begin(), name.end(), ',', '+');
        save_image_file(dir / "clean" / (name + ".img"), img);
    }
}

ComponentCatalog load_catalog(const fs::path& dir) {
    ComponentCatalog cat;
    std::ifstream in(dir / "components.tsv");
    if (!in)
        throw BadCatalog("cannot open components.tsv in " + dir.string());
    std::string line;
    int lineno = 0;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        std::stringstream ss(line);
        std::string id, version, caps, cpu, mem, pk;
        if (!std::getline(ss, id, '\t') || !std::getline(ss, version, '\t') ||
            !std::getline(ss, caps, '\t') || !std::getline(ss, cpu, '\t') ||
            !std::getline(ss, mem, '\t') || !std::getline(ss, pk, '\t'))
            throw BadCatalog("components.tsv line " + std::to_string(lineno) + ": bad format");
        SecurityComponentDescriptor c;
        c.component_id = id;
        try {
            c.version = std::stoull(version);
            c.cpu_cost = std::stoll(cpu);
            c.mem_cost = std::stoll(mem);
            c.public_key = from_hex(pk);
        } catch (const std::exception& e) {
            throw BadCatalog("components.tsv line " + std::to_string(lineno) + ": " + e.what());
        }
        std::stringstream cs(caps);
        std::string tag;
        while (std::getline(cs, tag, ','))
            if (!tag.empty())
                c.capabilities.insert(tag);
        if (c.capabilities.empty())
            throw BadCatalog("components.tsv line " + std::to_string(lineno) +
                             ": empty capability set");
        if (!ids.insert(c.component_id).second)
            throw BadCatalog("components.tsv line " + std::to_string(lineno) +
                             ": duplicate component_id");
        cat.entries.push_back(std::move(c));
    }
    cat.security_env_image = load_image_file(dir / "security.img");
    cat.core_image = load_image_file(dir / "core.img");
    if (fs::exists(dir / "clean"))
        for (const auto& e : fs::directory_iterator(dir / "clean")) {
            if (e.path().extension() != ".img")
                continue;
            VmImage img = load_image_file(e.path());
            cat.clean_guest_images[manifest_key(img.app_manifest)] = std::move(img);
        }
    return cat;
}

} // namespace vmsentry
