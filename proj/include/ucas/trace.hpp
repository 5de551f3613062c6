#pragma once

// Rollout-trace format: JSON lines, one rollout group per line, fields in a
// fixed order, doubles rendered as shortest round-trip decimals.
//
// {"format":"ucas-trace","version":1,"group_id":7,"prompt":[3,10,4,11],
//  "rollouts":[{"tokens":[12,7,13],"reward":1.0,"chosen_logit":[..],
//               "chosen_logprob":[..],"kl_uniform":[..],"entropy":[..],
//               "termination":"eos"}, ...],
//  "shaped":{"alpha":0.25,"beta":0.01,"epsilon":1e-06,"base":[..],
//            "confidence":[..],"confidence_z":[..],"weight":[..],"modulated":[..],
//            "token_certainty":[[..],..],"token_advantage":[[..],..]}}
//
// "shaped" is optional. Readers reject any version other than kTraceVersion.

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ucas/advantage.hpp"
#include "ucas/error.hpp"
#include "ucas/policy.hpp"

namespace ucas {

inline constexpr int kTraceVersion = 1;

struct EmbeddedShape {
    ShapeParams params;
    ShapedAdvantages values;

    friend bool operator==(const EmbeddedShape&, const EmbeddedShape&) = default;
};

struct TraceRecord {
    RolloutGroup group;
    std::optional<EmbeddedShape> shaped;

    friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson rollout_to_json(const Rollout& r, double reward) {
    ojson j;
    j["tokens"] = r.tokens;
    j["reward"] = reward;
    j["chosen_logit"] = r.chosen_logit;
    j["chosen_logprob"] = r.chosen_logprob;
    j["kl_uniform"] = r.kl_uniform;
    j["entropy"] = r.entropy;
    j["termination"] = r.termination == Termination::eos ? "eos" : "length_cap";
    return j;
}

inline ojson record_to_json(const TraceRecord& rec) {
    ojson j;
    j["format"] = "ucas-trace";
    j["version"] = kTraceVersion;
    j["group_id"] = rec.group.group_id;
    j["prompt"] = rec.group.prompt;
    ojson rs = ojson::array();
    for (std::size_t i = 0; i < rec.group.size(); ++i) rs.push_back(rollout_to_json(rec.group.rollouts[i], rec.group.rewards[i]));
    j["rollouts"] = std::move(rs);
    if (rec.shaped) {
        const auto& s = rec.shaped->values;
        ojson sj;
        sj["alpha"] = rec.shaped->params.alpha;
        sj["beta"] = rec.shaped->params.beta;
        sj["epsilon"] = rec.shaped->params.epsilon;
        sj["base"] = s.base;
        sj["confidence"] = s.confidence;
        sj["confidence_z"] = s.confidence_z;
        sj["weight"] = s.weight;
        sj["modulated"] = s.modulated;
        sj["token_certainty"] = s.token_certainty;
        sj["token_advantage"] = s.token_advantage;
        j["shaped"] = std::move(sj);
    }
    return j;
}

/// Typed field access that reports the offending field name.
class FieldReader {
public:
    explicit FieldReader(std::size_t line) : line_(line) {}

    const ojson& at(const ojson& obj, const std::string& key, const std::string& path) const {
        if (!obj.is_object()) throw ParseError(line_, path + ": expected an object");
        auto it = obj.find(key);
        if (it == obj.end()) throw ValidationError(path + key, "missing field");
        return *it;
    }

    double number(const ojson& v, const std::string& field) const {
        if (!v.is_number()) throw ValidationError(field, "expected a number");
        const double x = v.get<double>();
        if (!std::isfinite(x)) throw ValidationError(field, "non-finite value");
        return x;
    }

    std::vector<double> numbers(const ojson& v, const std::string& field) const {
        if (!v.is_array()) throw ValidationError(field, "expected an array");
        std::vector<double> out;
        out.reserve(v.size());
        for (const auto& x : v) out.push_back(number(x, field));
        return out;
    }

    std::vector<std::vector<double>> nested(const ojson& v, const std::string& field) const {
        if (!v.is_array()) throw ValidationError(field, "expected an array of arrays");
        std::vector<std::vector<double>> out;
        for (const auto& x : v) out.push_back(numbers(x, field));
        return out;
    }

    TokenSeq tokens(const ojson& v, const std::string& field) const {
        if (!v.is_array()) throw ValidationError(field, "expected an array");
        TokenSeq out;
        for (const auto& x : v) {
            if (!x.is_number_integer()) throw ValidationError(field, "expected integer token ids");
            const auto t = x.get<long long>();
            if (t < 0 || t >= Vocabulary::kSize) throw ValidationError(field, "token id out of vocabulary");
            out.push_back(static_cast<TokenId>(t));
        }
        return out;
    }

private:
    std::size_t line_;
};

inline TraceRecord record_from_json(const ojson& j, std::size_t line) {
    FieldReader f(line);
    if (!j.is_object()) throw ParseError(line, "expected a JSON object");
    const auto& format = f.at(j, "format", "");
    if (!format.is_string() || format.get<std::string>() != "ucas-trace") throw ValidationError("format", "not a ucas trace");
    const auto& version = f.at(j, "version", "");
    if (!version.is_number_integer() || version.get<long long>() != kTraceVersion)
        throw VersionError("line " + std::to_string(line) + ": unsupported trace version " + version.dump());

    TraceRecord rec;
    const auto& gid = f.at(j, "group_id", "");
    if (!gid.is_number_unsigned()) throw ValidationError("group_id", "expected a non-negative integer");
    rec.group.group_id = gid.get<std::uint64_t>();
    rec.group.prompt = f.tokens(f.at(j, "prompt", ""), "prompt");
    if (rec.group.prompt.empty()) throw ValidationError("prompt", "empty prompt");

    const auto& rs = f.at(j, "rollouts", "");
    if (!rs.is_array() || rs.size() < 2) throw ValidationError("rollouts", "need an array of at least 2 rollouts");
    for (std::size_t i = 0; i < rs.size(); ++i) {
        const std::string p = "rollouts[" + std::to_string(i) + "].";
        Rollout r;
        r.prompt = rec.group.prompt;
        r.tokens = f.tokens(f.at(rs[i], "tokens", p), p + "tokens");
        if (r.tokens.empty()) throw ValidationError(p + "tokens", "empty response");
        const double reward = f.number(f.at(rs[i], "reward", p), p + "reward");
        r.chosen_logit = f.numbers(f.at(rs[i], "chosen_logit", p), p + "chosen_logit");
        r.chosen_logprob = f.numbers(f.at(rs[i], "chosen_logprob", p), p + "chosen_logprob");
        r.kl_uniform = f.numbers(f.at(rs[i], "kl_uniform", p), p + "kl_uniform");
        r.entropy = f.numbers(f.at(rs[i], "entropy", p), p + "entropy");
        const auto& term = f.at(rs[i], "termination", p);
        if (term == "eos") {
            r.termination = Termination::eos;
        } else if (term == "length_cap") {
            r.termination = Termination::length_cap;
        } else {
            throw ValidationError(p + "termination", "expected \"eos\" or \"length_cap\"");
        }
        const std::pair<const char*, const std::vector<double>*> per_step[] = {
            {"chosen_logit", &r.chosen_logit}, {"chosen_logprob", &r.chosen_logprob},
            {"kl_uniform", &r.kl_uniform},     {"entropy", &r.entropy}};
        for (const auto& [name, arr] : per_step) {
            if (arr->size() != r.tokens.size()) throw ValidationError(p + name, "length disagrees with token count");
        }
        for (double lp : r.chosen_logprob) {
            if (lp > 1e-9) throw ValidationError(p + "chosen_logprob", "log-probability above zero");
        }
        for (double kl : r.kl_uniform) {
            if (kl < 0.0) throw ValidationError(p + "kl_uniform", "negative KL");
        }
        rec.group.rollouts.push_back(std::move(r));
        rec.group.rewards.push_back(reward);
    }

    if (auto it = j.find("shaped"); it != j.end()) {
        const auto& sj = *it;
        EmbeddedShape es;
        es.params.alpha = f.number(f.at(sj, "alpha", "shaped."), "shaped.alpha");
        es.params.beta = f.number(f.at(sj, "beta", "shaped."), "shaped.beta");
        es.params.epsilon = f.number(f.at(sj, "epsilon", "shaped."), "shaped.epsilon");
        auto& v = es.values;
        v.base = f.numbers(f.at(sj, "base", "shaped."), "shaped.base");
        v.confidence = f.numbers(f.at(sj, "confidence", "shaped."), "shaped.confidence");
        v.confidence_z = f.numbers(f.at(sj, "confidence_z", "shaped."), "shaped.confidence_z");
        v.weight = f.numbers(f.at(sj, "weight", "shaped."), "shaped.weight");
        v.modulated = f.numbers(f.at(sj, "modulated", "shaped."), "shaped.modulated");
        v.token_certainty = f.nested(f.at(sj, "token_certainty", "shaped."), "shaped.token_certainty");
        v.token_advantage = f.nested(f.at(sj, "token_advantage", "shaped."), "shaped.token_advantage");
        const std::size_t g = rec.group.size();
        const std::pair<const char*, std::size_t> sizes[] = {
            {"shaped.base", v.base.size()},       {"shaped.confidence", v.confidence.size()},
            {"shaped.confidence_z", v.confidence_z.size()}, {"shaped.weight", v.weight.size()},
            {"shaped.modulated", v.modulated.size()}, {"shaped.token_certainty", v.token_certainty.size()},
            {"shaped.token_advantage", v.token_advantage.size()}};
        for (const auto& [name, n] : sizes) {
            if (n != g) throw ValidationError(name, "length disagrees with rollout count");
        }
        for (std::size_t i = 0; i < g; ++i) {
            const auto n = rec.group.rollouts[i].size();
            if (v.token_certainty[i].size() != n) throw ValidationError("shaped.token_certainty", "row length disagrees with token count");
            if (v.token_advantage[i].size() != n) throw ValidationError("shaped.token_advantage", "row length disagrees with token count");
        }
        rec.shaped = std::move(es);
    }
    return rec;
}

}  // namespace detail

/// One line per record; returns the number of bytes written.
inline std::size_t write_trace(const std::vector<TraceRecord>& records, std::ostream& out) {
    std::size_t bytes = 0;
    for (const auto& rec : records) {
        rec.group.validate();
        const std::string line = detail::record_to_json(rec).dump();
        out << line << '\n';
        bytes += line.size() + 1;
    }
    return bytes;
}

inline std::size_t write_trace(const std::vector<TraceRecord>& records, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open trace for writing: " + path.string());
    const auto bytes = write_trace(records, out);
    out.flush();
    if (!out) throw IoError("failed writing trace: " + path.string());
    return bytes;
}

inline std::size_t write_trace(const std::vector<RolloutGroup>& groups, const std::filesystem::path& path) {
    std::vector<TraceRecord> recs;
    recs.reserve(groups.size());
    for (const auto& g : groups) recs.push_back({g, std::nullopt});
    return write_trace(recs, path);
}

/// Validates every line before returning; any error discards all records.
inline std::vector<TraceRecord> read_trace(std::istream& in) {
    std::vector<TraceRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        detail::ojson j;
        try {
            j = detail::ojson::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(line_no, std::string("malformed record: ") + e.what());
        }
        try {
            out.push_back(detail::record_from_json(j, line_no));
        } catch (const ValidationError& e) {
            throw ValidationError(e.field(), "line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<TraceRecord> read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trace: " + path.string());
    return read_trace(in);
}

struct FieldMismatch {
    std::uint64_t group_id = 0;
    std::string field;  // e.g. "token_advantage[2][0]"
    double expected = 0.0;
    double actual = 0.0;
};

struct ReplayResult {
    std::uint64_t group_id = 0;
    ShapedAdvantages shaped;
    bool compared = false;  // an embedded block was present
    std::vector<FieldMismatch> mismatches;
};

namespace detail {

inline bool replay_close(double expected, double actual, double tol) {
    return std::abs(expected - actual) <= tol * std::max(1.0, std::abs(expected));
}

inline void compare_field(std::uint64_t gid, const std::string& name, const std::vector<double>& expected,
                          const std::vector<double>& actual, double tol, std::vector<FieldMismatch>& out) {
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (!replay_close(expected[i], actual[i], tol))
            out.push_back({gid, name + "[" + std::to_string(i) + "]", expected[i], actual[i]});
    }
}

}  // namespace detail

/// Re-runs shaping on recorded signals. Where a record embeds a shaped block,
/// every field is compared within `tolerance`; differing (alpha, beta, epsilon)
/// are themselves reported as mismatches.
inline std::vector<ReplayResult> replay_shape(const std::vector<TraceRecord>& records, const ShapeParams& params,
                                              double tolerance = 1e-12) {
    std::vector<ReplayResult> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        ReplayResult r;
        r.group_id = rec.group.group_id;
        r.shaped = shape(rec.group, params);
        if (rec.shaped) {
            r.compared = true;
            const auto gid = r.group_id;
            const auto& e = rec.shaped->values;
            const auto& a = r.shaped;
            const auto& ep = rec.shaped->params;
            if (ep.alpha != params.alpha) r.mismatches.push_back({gid, "alpha", ep.alpha, params.alpha});
            if (ep.beta != params.beta) r.mismatches.push_back({gid, "beta", ep.beta, params.beta});
            if (ep.epsilon != params.epsilon) r.mismatches.push_back({gid, "epsilon", ep.epsilon, params.epsilon});
            detail::compare_field(gid, "base", e.base, a.base, tolerance, r.mismatches);
            detail::compare_field(gid, "confidence", e.confidence, a.confidence, tolerance, r.mismatches);
            detail::compare_field(gid, "confidence_z", e.confidence_z, a.confidence_z, tolerance, r.mismatches);
            detail::compare_field(gid, "weight", e.weight, a.weight, tolerance, r.mismatches);
            detail::compare_field(gid, "modulated", e.modulated, a.modulated, tolerance, r.mismatches);
            for (std::size_t i = 0; i < e.token_advantage.size(); ++i) {
                const std::string idx = "[" + std::to_string(i) + "]";
                detail::compare_field(gid, "token_certainty" + idx, e.token_certainty[i], a.token_certainty[i], tolerance,
                                      r.mismatches);
                detail::compare_field(gid, "token_advantage" + idx, e.token_advantage[i], a.token_advantage[i], tolerance,
                                      r.mismatches);
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<ReplayResult> replay_shape(const std::filesystem::path& trace, const ShapeParams& params,
                                              double tolerance = 1e-12) {
    return replay_shape(read_trace(trace), params, tolerance);
}

inline std::size_t count_mismatches(const std::vector<ReplayResult>& results) {
    std::size_t n = 0;
    for (const auto& r : results) n += r.mismatches.size();
    return n;
}

}  // namespace ucas
