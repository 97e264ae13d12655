// SPDX-License-Identifier: Apache-2.0
#include "vmsentry/detection.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>

namespace vmsentry {

const SignatureRule* Ruleset::find(std::string_view rule_id) const {
    for (const SignatureRule& r : rules)
        if (r.rule_id == rule_id)
            return &r;
    return nullptr;
}

Ruleset parse_ruleset(std::string_view text) {
    Ruleset rs;
    std::set<std::string> ids;
    std::stringstream ss{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#')
            continue;
        auto t1 = line.find('\t');
        auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw BadRuleset("ruleset line " + std::to_string(lineno) + ": expected 3 fields");
        SignatureRule rule;
        rule.rule_id = line.substr(0, t1);
        try {
            rule.pattern = from_hex(line.substr(t1 + 1, t2 - t1 - 1));
        } catch (const BadHex& e) {
            throw BadRuleset("ruleset line " + std::to_string(lineno) + ": " + e.what());
        }
        rule.description = line.substr(t2 + 1);
        if (rule.pattern.size() < 4)
            throw BadRuleset("ruleset line " + std::to_string(lineno) +
                             ": pattern shorter than 4 bytes");
        if (!ids.insert(rule.rule_id).second)
            throw BadRuleset("ruleset line " + std::to_string(lineno) + ": duplicate rule_id '" +
                             rule.rule_id + "'");
        rs.rules.push_back(std::move(rule));
    }
    return rs;
}

std::string serialize_ruleset(const Ruleset& rs) {
    std::string out;
    for (const SignatureRule& r : rs.rules) {
        out += r.rule_id;
        out += '\t';
        out += to_hex(r.pattern);
        out += '\t';
        out += r.description;
        out += '\n';
    }
    return out;
}

bool operator==(const Verdict& a, const Verdict& b) {
    return a.kind == b.kind && a.cause == b.cause;
}

Verdict signature_scan(const Observation& obs, const Ruleset& ruleset) {
    for (const SignatureRule& rule : ruleset.rules) {
        if (rule.pattern.empty() || rule.pattern.size() > obs.data.size())
            continue;
        auto it = std::search(obs.data.begin(), obs.data.end(), rule.pattern.begin(),
                              rule.pattern.end());
        if (it != obs.data.end())
            return Verdict::infected_by(rule.rule_id);
    }
    return Verdict::clean();
}

double shannon_entropy_bits_per_byte(ByteView data) {
    if (data.empty())
        return 0.0;
    std::array<std::size_t, 256> counts{};
    for (std::uint8_t b : data)
        ++counts[b];
    const double n = static_cast<double>(data.size());
    double h = 0.0;
    for (std::size_t c : counts) {
        if (c == 0)
            continue;
        double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

Verdict anomaly_scan(const Observation& obs, double threshold) {
    if (!(threshold > 0.0) || threshold > 8.0)
        throw std::invalid_argument("anomaly threshold must be in (0, 8]");
    double score = shannon_entropy_bits_per_byte(obs.data);
    if (score > threshold) {
        std::ostringstream cause;
        cause.precision(4);
        cause << std::fixed << "entropy=" << score;
        return Verdict::infected_by(cause.str());
    }
    return Verdict::clean();
}

} // namespace vmsentry
