#pragma once

// Flat "key = value" configuration files. '#' starts a comment. Keys mirror
// TrainConfig fields one-to-one; `mode` is applied first so its mode-specific
// defaults can be overridden by the remaining keys.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ucas/error.hpp"
#include "ucas/trainer.hpp"

namespace ucas {

using KeyValues = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

/// Shortest decimal that parses back to the same double.
inline std::string shortest(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ValidationError(key, "cannot parse '" + text + "'");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ValidationError(key, "expected true/false, got '" + text + "'");
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in) {
    KeyValues kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = detail::trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) throw ParseError(line_no, "expected key = value");
        const std::string key = detail::trim(std::string_view(body).substr(0, eq));
        const std::string value = detail::trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw ParseError(line_no, "empty key");
        kv[key] = value;
    }
    return kv;
}

inline KeyValues read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path.string());
    return parse_key_values(in);
}

/// Keys in echo order.
inline const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = {
        "mode",          "task",          "seed",           "steps",         "alpha",
        "beta_penalty",  "eps_low",       "eps_high",       "group_size",    "prompts_per_step",
        "temperature",   "learning_rate", "normalization",  "dynamic_sampling", "resample_factor",
        "update_epochs", "kl_coef",       "epsilon_std",    "max_prompt_len", "max_response_len",
        "init",          "adam_beta1",    "adam_beta2",     "adam_eps",      "window",
        "embed_dim",     "hidden_dim"};
    return keys;
}

inline void apply_key(TrainConfig& c, const std::string& key, const std::string& v) {
    using detail::parse_number;
    try {
        if (key == "mode") c.mode = parse_mode(v);
        else if (key == "task") c.task = parse_task_kind(v);
        else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
        else if (key == "steps") c.steps = parse_number<int>(key, v);
        else if (key == "alpha") c.alpha = parse_number<double>(key, v);
        else if (key == "beta_penalty") c.beta_penalty = parse_number<double>(key, v);
        else if (key == "eps_low") c.eps_low = parse_number<double>(key, v);
        else if (key == "eps_high") c.eps_high = parse_number<double>(key, v);
        else if (key == "group_size") c.group_size = parse_number<int>(key, v);
        else if (key == "prompts_per_step") c.prompts_per_step = parse_number<int>(key, v);
        else if (key == "temperature") c.temperature = parse_number<double>(key, v);
        else if (key == "learning_rate") c.learning_rate = parse_number<double>(key, v);
        else if (key == "normalization") c.normalization = parse_normalization(v);
        else if (key == "dynamic_sampling") c.dynamic_sampling = detail::parse_bool(key, v);
        else if (key == "resample_factor") c.resample_factor = parse_number<int>(key, v);
        else if (key == "update_epochs") c.update_epochs = parse_number<int>(key, v);
        else if (key == "kl_coef") c.kl_coef = parse_number<double>(key, v);
        else if (key == "epsilon_std") c.epsilon_std = parse_number<double>(key, v);
        else if (key == "max_prompt_len") c.max_prompt_len = parse_number<int>(key, v);
        else if (key == "max_response_len") c.max_response_len = parse_number<int>(key, v);
        else if (key == "init") c.init = parse_init_mode(v);
        else if (key == "adam_beta1") c.adam_beta1 = parse_number<double>(key, v);
        else if (key == "adam_beta2") c.adam_beta2 = parse_number<double>(key, v);
        else if (key == "adam_eps") c.adam_eps = parse_number<double>(key, v);
        else if (key == "window") c.arch.window = parse_number<int>(key, v);
        else if (key == "embed_dim") c.arch.embed_dim = parse_number<int>(key, v);
        else if (key == "hidden_dim") c.arch.hidden_dim = parse_number<int>(key, v);
        else throw ValidationError(key, "unknown configuration key");
    } catch (const InvalidInput& e) {
        throw ValidationError(key, e.what());
    }
}

/// Mode defaults first, then every other key; validated.
inline TrainConfig build_config(const KeyValues& kv) {
    TrainConfig c;
    if (auto it = kv.find("mode"); it != kv.end()) {
        try {
            c = TrainConfig::for_mode(parse_mode(it->second));
        } catch (const InvalidInput& e) {
            throw ValidationError("mode", e.what());
        }
    }
    for (const auto& [k, v] : kv) {
        if (k != "mode") apply_key(c, k, v);
    }
    c.validate();
    return c;
}

inline KeyValues to_key_values(const TrainConfig& c) {
    using detail::shortest;
    return {
        {"mode", std::string(to_string(c.mode))},
        {"task", std::string(to_string(c.task))},
        {"seed", std::to_string(c.seed)},
        {"steps", std::to_string(c.steps)},
        {"alpha", shortest(c.alpha)},
        {"beta_penalty", shortest(c.beta_penalty)},
        {"eps_low", shortest(c.eps_low)},
        {"eps_high", shortest(c.eps_high)},
        {"group_size", std::to_string(c.group_size)},
        {"prompts_per_step", std::to_string(c.prompts_per_step)},
        {"temperature", shortest(c.temperature)},
        {"learning_rate", shortest(c.learning_rate)},
        {"normalization", std::string(to_string(c.normalization))},
        {"dynamic_sampling", c.dynamic_sampling ? "true" : "false"},
        {"resample_factor", std::to_string(c.resample_factor)},
        {"update_epochs", std::to_string(c.update_epochs)},
        {"kl_coef", shortest(c.kl_coef)},
        {"epsilon_std", shortest(c.epsilon_std)},
        {"max_prompt_len", std::to_string(c.max_prompt_len)},
        {"max_response_len", std::to_string(c.max_response_len)},
        {"init", std::string(to_string(c.init))},
        {"adam_beta1", shortest(c.adam_beta1)},
        {"adam_beta2", shortest(c.adam_beta2)},
        {"adam_eps", shortest(c.adam_eps)},
        {"window", std::to_string(c.arch.window)},
        {"embed_dim", std::to_string(c.arch.embed_dim)},
        {"hidden_dim", std::to_string(c.arch.hidden_dim)},
    };
}

inline void write_config(const TrainConfig& c, std::ostream& out) {
    const auto kv = to_key_values(c);
    for (const auto& key : config_keys()) out << key << " = " << kv.at(key) << '\n';
}

inline void write_config(const TrainConfig& c, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write config: " + path.string());
    write_config(c, out);
}

}  // namespace ucas
