#pragma once

#include <optional>
#include <string>
#include <vector>

#include "critmap/criticality.hpp"

namespace critmap {

enum class ReportView {
    mean,    // mean criticality per layer
    delta,   // mean minus the baseline profile's mean
    std_error,  // standard error across trials
};

std::string_view to_string(ReportView view);
ReportView report_view_from_string(std::string_view name);

/// Models x layers grid of one statistic. Rows follow the profile order,
/// columns the (shared) topological layer order.
struct ReportMatrix {
    ReportView view = ReportView::mean;
    std::vector<std::string> models;
    std::vector<std::string> layers;
    std::vector<std::vector<double>> values;  // [model][layer]
    std::vector<double> clean_accuracy;       // per model
    std::optional<std::string> baseline;

    double value(std::size_t model, std::size_t layer) const { return values.at(model).at(layer); }
};

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation; 0 for a single value
};
MeanStd mean_std(const std::vector<double>& values);

/// Fails with an alignment error unless every profile lists the same layers in
/// the same order. The delta view needs `baseline` to name one of the profiles.
ReportMatrix build_report(const std::vector<CriticalityProfile>& profiles, ReportView view,
                          const std::optional<std::string>& baseline = std::nullopt);

/// Long format: model_id,layer_id,mean,std,stderr[,delta]; one row per model and layer.
std::string report_csv(const std::vector<CriticalityProfile>& profiles, const ReportMatrix& matrix);
std::string report_json(const ReportMatrix& matrix);

/// Grayscale heatmap. Cell luminance is 1 - value for the mean and stderr views
/// and (1 - value) / 2 for the delta view, so 0 is white (mid gray for delta)
/// and larger values are darker. Row and column marginals print mean +- std.
std::string report_svg(const ReportMatrix& matrix);

/// Spearman R between mean model criticality and clean accuracy. A degenerate
/// input (constant series) yields no value and a warning instead of an error.
struct Correlation {
    std::optional<double> spearman_r;
    std::string warning;
    std::vector<std::string> models;
    std::vector<double> mean_criticality;
    std::vector<double> clean_accuracy;
};
Correlation correlate(const std::vector<CriticalityProfile>& profiles);
/// model_id,mean_criticality,clean_accuracy
std::string correlation_csv(const Correlation& c);

}  // namespace critmap
