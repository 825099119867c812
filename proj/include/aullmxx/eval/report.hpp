#ifndef AULLMXX_EVAL_REPORT_HPP
#define AULLMXX_EVAL_REPORT_HPP

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "aullmxx/eval/protocol.hpp"

namespace aullmxx::eval {

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json j;
    j["protocol"] = r.protocol;
    j["aggregation"] = r.aggregation;
    j["au_names"] = r.au_names;
    j["macro_f1"] = r.macro;
    j["config_fingerprint"] = r.config_fingerprint;
    j["seed"] = r.seed;
    auto& per_au = j["per_au"] = nlohmann::json::object();
    for (std::size_t k = 0; k < r.au_names.size(); ++k) {
        per_au[r.au_names[k]] = {{"f1", r.per_au_f1[k]}, {"included", bool(r.included[k])}};
    }
    auto& folds = j["fold_details"] = nlohmann::json::array();
    for (const auto& f : r.fold_details) {
        folds.push_back({{"held_out", f.held_out_subject},
                         {"train_size", f.train_size},
                         {"test_size", f.test_size},
                         {"final_loss", f.final_loss}});
    }
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.aggregation = j.at("aggregation").get<std::string>();
    r.au_names = j.at("au_names").get<std::vector<std::string>>();
    r.macro = j.at("macro_f1").get<double>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& au : r.au_names) {
        const auto& e = j.at("per_au").at(au);
        r.per_au_f1.push_back(e.at("f1").get<double>());
        r.included.push_back(e.at("included").get<bool>());
    }
    for (const auto& f : j.at("fold_details")) {
        r.fold_details.push_back({f.at("held_out").get<std::string>(),
                                  f.at("train_size").get<std::size_t>(),
                                  f.at("test_size").get<std::size_t>(),
                                  f.at("final_loss").get<double>()});
    }
    r.validate();
    return r;
}

// report.json (canonical key order) plus report.csv with one row per AU and a
// trailing macro row.
inline void emit_report(const EvalReport& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "report.json");
        if (!out) throw IoError("cannot write report.json under " + dir);
        out << report_to_json(r).dump(2) << '\n';
    }
    {
        std::ofstream out(fs::path(dir) / "report.csv");
        if (!out) throw IoError("cannot write report.csv under " + dir);
        out << "au,f1,included\n";
        char buf[64];
        for (std::size_t k = 0; k < r.au_names.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%.6f", r.per_au_f1[k]);
            out << r.au_names[k] << ',' << buf << ',' << (r.included[k] ? 1 : 0) << '\n';
        }
        std::snprintf(buf, sizeof(buf), "%.6f", r.macro);
        out << "macro," << buf << ",\n";
    }
}

inline EvalReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("report parse error: " + std::string(e.what()));
    }
    return report_from_json(j);
}

namespace svg_detail {

inline std::string color_for(double f1) {
    // white -> steel blue ramp
    const int r = static_cast<int>(255 - f1 * 185);
    const int g = static_cast<int>(255 - f1 * 125);
    const int b = 255;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", r, g, b);
    return buf;
}

}  // namespace svg_detail

// Per-AU bar chart, and for cross-domain reports an AU x 1 heatmap strip.
inline void render_plots(const EvalReport& r, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t n = r.au_names.size();
    {
        const int bar_w = 48, gap = 12, height = 220, base = 180;
        const int width = static_cast<int>(n) * (bar_w + gap) + gap + 40;
        std::ofstream out(fs::path(dir) / "per_au_f1.svg");
        if (!out) throw IoError("cannot write per_au_f1.svg under " + dir);
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
            << height << "\">\n";
        out << "<text x=\"8\" y=\"16\" font-size=\"13\">per-AU F1 (" << r.protocol << ", macro=";
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.4f", r.macro);
        out << buf << ")</text>\n";
        for (std::size_t k = 0; k < n; ++k) {
            const int x = gap + static_cast<int>(k) * (bar_w + gap);
            const int h = static_cast<int>(r.per_au_f1[k] * 140);
            out << "<rect x=\"" << x << "\" y=\"" << base - h << "\" width=\"" << bar_w
                << "\" height=\"" << h << "\" fill=\""
                << (r.included[k] ? "#4878b0" : "#bbbbbb") << "\"/>\n";
            std::snprintf(buf, sizeof(buf), "%.3f", r.per_au_f1[k]);
            out << "<text x=\"" << x << "\" y=\"" << base + 16 << "\" font-size=\"11\">"
                << r.au_names[k] << "</text>\n";
            out << "<text x=\"" << x << "\" y=\"" << base - h - 4 << "\" font-size=\"10\">" << buf
                << "</text>\n";
        }
        out << "</svg>\n";
    }
    if (r.protocol == "crossdomain") {
        const int cell = 56, height = 120;
        const int width = static_cast<int>(n) * cell + 80;
        std::ofstream out(fs::path(dir) / "crossdomain_heatmap.svg");
        if (!out) throw IoError("cannot write crossdomain_heatmap.svg under " + dir);
        out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
            << height << "\">\n";
        out << "<text x=\"8\" y=\"16\" font-size=\"13\">"
            << (r.fold_details.empty() ? "transfer" : r.fold_details[0].held_out_subject)
            << " per-AU F1</text>\n";
        char buf[32];
        for (std::size_t k = 0; k < n; ++k) {
            const int x = 8 + static_cast<int>(k) * cell;
            out << "<rect x=\"" << x << "\" y=\"28\" width=\"" << cell - 4
                << "\" height=\"48\" fill=\"" << svg_detail::color_for(r.per_au_f1[k])
                << "\"/>\n";
            std::snprintf(buf, sizeof(buf), "%.2f", r.per_au_f1[k]);
            out << "<text x=\"" << x + 4 << "\" y=\"56\" font-size=\"11\">" << buf << "</text>\n";
            out << "<text x=\"" << x + 4 << "\" y=\"92\" font-size=\"11\">" << r.au_names[k]
                << "</text>\n";
        }
        out << "</svg>\n";
    }
}

}  // namespace aullmxx::eval

#endif  // AULLMXX_EVAL_REPORT_HPP
