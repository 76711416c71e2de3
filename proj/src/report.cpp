#include "critmap/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>

#include "critmap/model_io.hpp"

namespace critmap {

using nlohmann::json;

std::string_view to_string(ReportView view) {
    switch (view) {
        case ReportView::mean: return "mean";
        case ReportView::delta: return "delta";
        case ReportView::std_error: return "stderr";
    }
    return "mean";
}

ReportView report_view_from_string(std::string_view name) {
    if (name == "mean") return ReportView::mean;
    if (name == "delta") return ReportView::delta;
    if (name == "stderr") return ReportView::std_error;
    fail(ErrorKind::parameter, "unknown report view '" + std::string(name) + "'");
}

MeanStd mean_std(const std::vector<double>& values) {
    require(!values.empty(), ErrorKind::parameter, "mean_std of an empty series");
    MeanStd r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return r;
}

ReportMatrix build_report(const std::vector<CriticalityProfile>& profiles, ReportView view,
                          const std::optional<std::string>& baseline) {
    require(!profiles.empty(), ErrorKind::parameter, "report needs at least one profile");
    ReportMatrix m;
    m.view = view;
    for (const auto& e : profiles.front().entries) m.layers.push_back(e.layer_id);
    for (const auto& p : profiles) {
        require(p.entries.size() == m.layers.size(), ErrorKind::alignment,
                "profile '" + p.model_id + "' has " + std::to_string(p.entries.size()) + " layers, expected " +
                    std::to_string(m.layers.size()));
        for (std::size_t i = 0; i < m.layers.size(); ++i)
            require(p.entries[i].layer_id == m.layers[i], ErrorKind::alignment,
                    "profile '" + p.model_id + "' column " + std::to_string(i) + " is '" + p.entries[i].layer_id +
                        "', expected '" + m.layers[i] + "'");
    }

    const CriticalityProfile* base = nullptr;
    if (baseline) {
        for (const auto& p : profiles)
            if (p.model_id == *baseline) base = &p;
        require(base != nullptr, ErrorKind::lookup, "baseline '" + *baseline + "' is not among the profiles");
        m.baseline = baseline;
    }
    require(view != ReportView::delta || base != nullptr, ErrorKind::parameter, "delta view needs a baseline");

    for (const auto& p : profiles) {
        m.models.push_back(p.model_id);
        m.clean_accuracy.push_back(p.clean_accuracy);
        std::vector<double> row;
        if (view == ReportView::delta) {
            row = delta_to_baseline(p, *base);
        } else {
            for (const auto& e : p.entries) row.push_back(view == ReportView::mean ? e.mean : e.std_error);
        }
        m.values.push_back(std::move(row));
    }
    return m;
}

std::string report_csv(const std::vector<CriticalityProfile>& profiles, const ReportMatrix& m) {
    const bool delta = m.baseline.has_value();
    std::string out = delta ? "model_id,layer_id,mean,std,stderr,delta\n" : "model_id,layer_id,mean,std,stderr\n";
    std::vector<double> base;
    if (delta)
        for (const auto& p : profiles)
            if (p.model_id == *m.baseline)
                for (const auto& e : p.entries) base.push_back(e.mean);
    for (const auto& p : profiles) {
        for (std::size_t i = 0; i < p.entries.size(); ++i) {
            const auto& e = p.entries[i];
            out += p.model_id + ',' + e.layer_id + ',' + io::format_double(e.mean) + ',' + io::format_double(e.stddev) +
                   ',' + io::format_double(e.std_error);
            if (delta) out += ',' + io::format_double(e.mean - base.at(i));
            out += '\n';
        }
    }
    return out;
}

std::string report_json(const ReportMatrix& m) {
    json j;
    j["view"] = to_string(m.view);
    j["baseline"] = m.baseline ? json(*m.baseline) : json(nullptr);
    j["layers"] = m.layers;
    j["models"] = json::array();
    for (std::size_t r = 0; r < m.models.size(); ++r) {
        const auto row = mean_std(m.values[r]);
        j["models"].push_back({{"model_id", m.models[r]},
                               {"clean_accuracy", m.clean_accuracy[r]},
                               {"row_mean", row.mean},
                               {"row_std", row.stddev},
                               {"values", m.values[r]}});
    }
    json cols = json::array();
    for (std::size_t c = 0; c < m.layers.size(); ++c) {
        std::vector<double> col;
        for (const auto& row : m.values) col.push_back(row[c]);
        const auto ms = mean_std(col);
        cols.push_back({{"layer_id", m.layers[c]}, {"mean", ms.mean}, {"std", ms.stddev}});
    }
    j["columns"] = cols;
    return j.dump(2) + "\n";
}

namespace {

std::string escape_xml(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fixed(double v, int digits = 3) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

}  // namespace

std::string report_svg(const ReportMatrix& m) {
    constexpr int cell = 22, label_w = 180, top = 150, marg_w = 110, marg_h = 60;
    const int rows = static_cast<int>(m.models.size()), cols = static_cast<int>(m.layers.size());
    const int width = label_w + cols * cell + marg_w;
    const int height = top + rows * cell + marg_h;

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
         std::to_string(height) + "\" font-family=\"monospace\" font-size=\"10\">\n";
    s += "<title>layer criticality (" + std::string(to_string(m.view)) + ")</title>\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

    for (int c = 0; c < cols; ++c) {
        const int x = label_w + c * cell + cell / 2;
        s += "<text class=\"layer\" transform=\"translate(" + std::to_string(x) + "," + std::to_string(top - 6) +
             ") rotate(-60)\">" + escape_xml(m.layers[c]) + "</text>\n";
    }
    for (int r = 0; r < rows; ++r) {
        const int y = top + r * cell;
        s += "<text class=\"model\" x=\"4\" y=\"" + std::to_string(y + cell / 2 + 4) + "\">" + escape_xml(m.models[r]) +
             "</text>\n";
        for (int c = 0; c < cols; ++c) {
            const double v = m.values[r][c];
            const double lum = std::clamp(m.view == ReportView::delta ? (1.0 - v) / 2.0 : 1.0 - v, 0.0, 1.0);
            const int g = static_cast<int>(std::lround(lum * 255.0));
            const std::string rgb = "rgb(" + std::to_string(g) + "," + std::to_string(g) + "," + std::to_string(g) + ")";
            s += "<rect class=\"cell\" x=\"" + std::to_string(label_w + c * cell) + "\" y=\"" + std::to_string(y) +
                 "\" width=\"" + std::to_string(cell) + "\" height=\"" + std::to_string(cell) + "\" fill=\"" + rgb +
                 "\" stroke=\"#ccc\"><title>" + escape_xml(m.models[r]) + " / " + escape_xml(m.layers[c]) + ": " +
                 io::format_double(v) + "</title></rect>\n";
        }
        const auto ms = mean_std(m.values[r]);
        s += "<text class=\"row-marginal\" x=\"" + std::to_string(label_w + cols * cell + 6) + "\" y=\"" +
             std::to_string(y + cell / 2 + 4) + "\">" + fixed(ms.mean) + "±" + fixed(ms.stddev) + "</text>\n";
    }
    for (int c = 0; c < cols; ++c) {
        std::vector<double> col;
        for (const auto& row : m.values) col.push_back(row[c]);
        const auto ms = mean_std(col);
        const int x = label_w + c * cell + cell / 2;
        s += "<text class=\"col-marginal\" transform=\"translate(" + std::to_string(x) + "," +
             std::to_string(top + rows * cell + 8) + ") rotate(60)\">" + fixed(ms.mean) + "±" + fixed(ms.stddev) +
             "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

Correlation correlate(const std::vector<CriticalityProfile>& profiles) {
    Correlation c;
    for (const auto& p : profiles) {
        c.models.push_back(p.model_id);
        c.mean_criticality.push_back(mean_model_criticality(p));
        c.clean_accuracy.push_back(p.clean_accuracy);
    }
    try {
        c.spearman_r = spearman(c.mean_criticality, c.clean_accuracy);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::degenerate) throw;
        c.warning = e.what();
    }
    return c;
}

std::string correlation_csv(const Correlation& c) {
    std::string out = "model_id,mean_criticality,clean_accuracy\n";
    for (std::size_t i = 0; i < c.models.size(); ++i)
        out += c.models[i] + ',' + io::format_double(c.mean_criticality[i]) + ',' +
               io::format_double(c.clean_accuracy[i]) + '\n';
    return out;
}

}  // namespace critmap
