#pragma once

// Metrics CSV: one row per trained (non-skipped) step, columns
//   step,mean_reward,resp_len,gen_entropy,mean_confidence,adv_mean,adv_std,loss,clip_frac,groups_kept

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucas/config.hpp"
#include "ucas/error.hpp"
#include "ucas/trainer.hpp"

namespace ucas {

inline constexpr const char* kMetricsHeader =
    "step,mean_reward,resp_len,gen_entropy,mean_confidence,adv_mean,adv_std,loss,clip_frac,groups_kept";

inline std::string metrics_row(const StepMetrics& m) {
    using detail::shortest;
    std::string row = std::to_string(m.step);
    for (double v : {m.mean_reward, m.mean_response_length, m.mean_entropy, m.mean_confidence, m.adv_mean, m.adv_std, m.loss,
                     m.clip_fraction}) {
        row += ',';
        row += shortest(v);
    }
    row += ',' + std::to_string(m.groups_kept);
    return row;
}

/// Streams rows as steps complete; skipped steps are not written.
class MetricsWriter {
public:
    explicit MetricsWriter(const std::filesystem::path& path) : out_(path) {
        if (!out_) throw IoError("cannot open metrics file: " + path.string());
        out_ << kMetricsHeader << '\n';
    }

    void append(const StepMetrics& m) {
        if (m.skipped) return;
        out_ << metrics_row(m) << '\n';
        out_.flush();
        if (!out_) throw IoError("failed writing metrics");
    }

private:
    std::ofstream out_;
};

/// Parsed metrics file: column name -> values, plus the step column.
struct MetricsTable {
    std::vector<std::string> columns;  // excluding "step"
    std::vector<int> steps;
    std::map<std::string, std::vector<double>> values;
};

inline MetricsTable read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open metrics file: " + path.string());
    MetricsTable t;
    std::string line;
    std::size_t line_no = 1;
    if (!std::getline(in, line)) throw ParseError(1, "empty metrics file");
    {
        std::istringstream hs(line);
        std::string col;
        std::getline(hs, col, ',');
        if (col != "step") throw ParseError(1, "first column must be 'step'");
        while (std::getline(hs, col, ',')) t.columns.push_back(col);
    }
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::getline(ls, cell, ',');
        try {
            t.steps.push_back(std::stoi(cell));
            for (const auto& col : t.columns) {
                if (!std::getline(ls, cell, ',')) throw ParseError(line_no, "missing column " + col);
                t.values[col].push_back(std::stod(cell));
            }
        } catch (const std::logic_error&) {
            throw ParseError(line_no, "bad number");
        }
    }
    return t;
}

}  // namespace ucas
