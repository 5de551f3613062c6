#pragma once

// Textual parameter checkpoint. Values are written as hexadecimal floats so a
// write/read roundtrip is bit-exact.
//
//   ucas-policy 1
//   window 16
//   embed_dim 8
//   hidden_dim 64
//   vocab_size 15
//   nonlinearity tanh
//   embedding <count>
//   <values...>
//   hidden_weight <count>
//   ...                      (hidden_bias, output_weight, output_bias)

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>

#include "ucas/error.hpp"
#include "ucas/policy.hpp"

namespace ucas {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline std::string hexfloat(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    return std::string(buf, res.ptr);
}

inline double parse_hexfloat(const std::string& s, std::size_t line) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    bool negative = false;
    if (first != last && *first == '-') {
        negative = true;
        ++first;
    }
    auto res = std::from_chars(first, last, v, std::chars_format::hex);
    if (res.ec != std::errc{} || res.ptr != last) throw ParseError(line, "bad number '" + s + "'");
    return negative ? -v : v;
}

}  // namespace detail

inline void write_checkpoint(const PolicyParams& params, std::ostream& out) {
    const auto& a = params.arch();
    out << "ucas-policy " << kCheckpointVersion << '\n'
        << "window " << a.window << '\n'
        << "embed_dim " << a.embed_dim << '\n'
        << "hidden_dim " << a.hidden_dim << '\n'
        << "vocab_size " << a.vocab_size << '\n'
        << "nonlinearity tanh\n";
    const std::pair<const char*, std::span<const double>> blocks[] = {
        {"embedding", params.embedding()},         {"hidden_weight", params.hidden_weight()},
        {"hidden_bias", params.hidden_bias()},     {"output_weight", params.output_weight()},
        {"output_bias", params.output_bias()},
    };
    for (const auto& [name, values] : blocks) {
        out << name << ' ' << values.size() << '\n';
        for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << detail::hexfloat(values[i]);
        out << '\n';
    }
}

inline void write_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    write_checkpoint(params, out);
    if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

inline PolicyParams read_checkpoint(std::istream& in) {
    std::size_t line_no = 0;
    std::string line;
    auto next_line = [&]() -> std::string {
        if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
        ++line_no;
        return line;
    };
    auto keyed = [&](const char* key) -> std::string {
        std::istringstream ls(next_line());
        std::string k, v;
        ls >> k >> v;
        if (k != key || v.empty()) throw ParseError(line_no, std::string("expected '") + key + "'");
        return v;
    };
    auto keyed_int = [&](const char* key) {
        const std::string v = keyed(key);
        int x = 0;
        auto res = std::from_chars(v.data(), v.data() + v.size(), x);
        if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) throw ParseError(line_no, "bad integer for " + std::string(key));
        return x;
    };

    if (keyed_int("ucas-policy") != kCheckpointVersion) throw VersionError("unsupported checkpoint version");
    Architecture arch;
    arch.window = keyed_int("window");
    arch.embed_dim = keyed_int("embed_dim");
    arch.hidden_dim = keyed_int("hidden_dim");
    arch.vocab_size = keyed_int("vocab_size");
    if (keyed("nonlinearity") != "tanh") throw ParseError(line_no, "unsupported nonlinearity");
    PolicyParams params(arch);

    auto read_block = [&](const char* name, std::span<double> dst) {
        if (static_cast<std::size_t>(keyed_int(name)) != dst.size()) throw ValidationError(name, "size mismatch");
        std::istringstream ls(next_line());
        std::string tok;
        std::size_t i = 0;
        while (ls >> tok) {
            if (i >= dst.size()) throw ParseError(line_no, "too many values");
            dst[i++] = detail::parse_hexfloat(tok, line_no);
        }
        if (i != dst.size()) throw ParseError(line_no, "too few values");
    };
    read_block("embedding", params.embedding());
    read_block("hidden_weight", params.hidden_weight());
    read_block("hidden_bias", params.hidden_bias());
    read_block("output_weight", params.output_weight());
    read_block("output_bias", params.output_bias());
    if (!params.all_finite()) throw ValidationError("params", "non-finite parameter");
    return params;
}

inline PolicyParams read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    return read_checkpoint(in);
}

}  // namespace ucas
