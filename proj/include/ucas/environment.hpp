#pragma once

// Synthetic verifiable tasks and the rule-based verifier.
//
//   modsum      "a+b="           -> decimal digits of a+b   (a, b single digits)
//   sortdigits  "d1d2..dn=" n=3..5 -> the digits sorted ascending
//
// A response is scored by the digits that follow its final '#'.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "ucas/error.hpp"
#include "ucas/policy.hpp"
#include "ucas/vocabulary.hpp"

namespace ucas {

enum class TaskKind { modsum, sortdigits };

inline std::string_view to_string(TaskKind k) { return k == TaskKind::modsum ? "modsum" : "sortdigits"; }

inline TaskKind parse_task_kind(std::string_view s) {
    if (s == "modsum") return TaskKind::modsum;
    if (s == "sortdigits") return TaskKind::sortdigits;
    throw InvalidInput("unknown task kind '" + std::string(s) + "'");
}

struct TaskInstance {
    TaskKind kind = TaskKind::modsum;
    TokenSeq prompt;
    TokenSeq answer;
    std::uint64_t seed = 0;

    friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

struct Verdict {
    double reward = 0.0;
    TokenSeq extracted;
};

inline TaskInstance make_modsum(int a, int b, std::uint64_t seed = 0) {
    if (a < 0 || a > 9 || b < 0 || b > 9) throw InvalidInput("modsum operands must be single digits");
    TaskInstance inst{TaskKind::modsum, {a, Vocabulary::kPlus, b, Vocabulary::kEquals}, {}, seed};
    const int sum = a + b;
    if (sum >= 10) inst.answer.push_back(sum / 10);
    inst.answer.push_back(sum % 10);
    return inst;
}

inline TaskInstance make_sortdigits(TokenSeq digits, std::uint64_t seed = 0) {
    if (digits.empty()) throw InvalidInput("sortdigits needs at least one digit");
    for (TokenId d : digits) {
        if (!Vocabulary::is_digit(d)) throw InvalidInput("sortdigits: non-digit token");
    }
    TaskInstance inst{TaskKind::sortdigits, digits, digits, seed};
    inst.prompt.push_back(Vocabulary::kEquals);
    std::sort(inst.answer.begin(), inst.answer.end());
    return inst;
}

/// Deterministic in `seed`.
inline TaskInstance make_instance(TaskKind kind, std::uint64_t seed) {
    Rng rng(seed);
    auto digit = [&] { return static_cast<TokenId>(rng() % 10); };
    if (kind == TaskKind::modsum) {
        const int a = digit();
        const int b = digit();
        return make_modsum(a, b, seed);
    }
    const int n = 3 + static_cast<int>(rng() % 3);
    TokenSeq digits(static_cast<std::size_t>(n));
    for (auto& d : digits) d = digit();
    return make_sortdigits(std::move(digits), seed);
}

inline TaskInstance make_instance(TaskKind kind, Rng& rng) { return make_instance(kind, rng()); }

/// Extracts the maximal run of digits immediately after the last '#', stopping
/// at the first non-digit (end-of-sequence included). Reward is 1 iff the
/// extraction equals the ground truth.
inline Verdict verify(const TaskInstance& instance, std::span<const TokenId> response) {
    Verdict v;
    auto end = std::find(response.begin(), response.end(), Vocabulary::kEos);
    auto last_delim = std::find(std::make_reverse_iterator(end), response.rend(), Vocabulary::kAnswer);
    if (last_delim == response.rend()) return v;
    for (auto it = last_delim.base(); it != end && Vocabulary::is_digit(*it); ++it) v.extracted.push_back(*it);
    if (!v.extracted.empty() && v.extracted == instance.answer) v.reward = 1.0;
    return v;
}

/// Shortest rewarded response: '#', the answer digits, end-of-sequence.
inline TokenSeq reference_response(const TaskInstance& instance) {
    TokenSeq r{Vocabulary::kAnswer};
    r.insert(r.end(), instance.answer.begin(), instance.answer.end());
    r.push_back(Vocabulary::kEos);
    return r;
}

inline std::vector<TaskInstance> make_eval_set(TaskKind kind, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TaskInstance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_instance(kind, rng));
    return out;
}

// Evaluation-set file: one "prompt<TAB>answer" line per instance, e.g. "3+4=\t7".

inline void write_eval_set(const std::vector<TaskInstance>& set, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open eval set for writing: " + path.string());
    for (const auto& inst : set) out << Vocabulary::decode(inst.prompt) << '\t' << Vocabulary::decode(inst.answer) << '\n';
    if (!out) throw IoError("failed writing eval set: " + path.string());
}

inline std::vector<TaskInstance> read_eval_set(std::istream& in) {
    std::vector<TaskInstance> set;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(line_no, "expected prompt<TAB>answer");
        TaskInstance inst;
        try {
            inst.prompt = Vocabulary::encode(std::string_view(line).substr(0, tab));
            inst.answer = Vocabulary::encode(std::string_view(line).substr(tab + 1));
        } catch (const InvalidInput& e) {
            throw ParseError(line_no, e.what());
        }
        if (inst.prompt.empty() || inst.prompt.back() != Vocabulary::kEquals)
            throw ParseError(line_no, "prompt must end with '='");
        if (inst.answer.empty() || !std::all_of(inst.answer.begin(), inst.answer.end(), Vocabulary::is_digit))
            throw ParseError(line_no, "answer must be a non-empty digit string");
        const bool has_plus = std::find(inst.prompt.begin(), inst.prompt.end(), Vocabulary::kPlus) != inst.prompt.end();
        inst.kind = has_plus ? TaskKind::modsum : TaskKind::sortdigits;
        inst.seed = line_no;
        set.push_back(std::move(inst));
    }
    return set;
}

inline std::vector<TaskInstance> read_eval_set(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open eval set: " + path.string());
    return read_eval_set(in);
}

}  // namespace ucas
