#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/volume.hpp"

namespace voxseg {

struct ConfusionCounts {
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    std::int64_t total() const { return tp + fp + fn + tn; }
};

/// One-vs-rest voxel counts for a class.
ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth, int class_id);

// Empty/empty conventions: when both sets are empty, dice = jaccard =
// precision = recall = 1 (perfect agreement); an empty prediction against a
// nonempty truth (or vice versa) scores 0.
double dice(const ConfusionCounts& c);
double jaccard(const ConfusionCounts& c);
double accuracy(const ConfusionCounts& c);
double precision(const ConfusionCounts& c);
double recall(const ConfusionCounts& c);

/// Foreground voxels of `class_id` with at least one 6-neighbor that is not
/// that class (voxels on the volume boundary count as surface).
std::vector<std::array<int, 3>> surface_voxels(const LabelMask& m, int class_id);

/// Exact symmetric Hausdorff distance between two voxel-index sets, measured
/// between voxel centers in mm. Throws when either set is empty.
double hausdorff_mm(const std::vector<std::array<int, 3>>& a,
                    const std::vector<std::array<int, 3>>& b,
                    const std::array<double, 3>& spacing_mm);

struct ClassMetrics {
    double dice = 0, jaccard = 0, accuracy = 0, precision = 0, recall = 0;
    double hausdorff_mm = 0;
    bool hausdorff_defined = false; // false when either surface is empty
};

struct CaseReport {
    std::string case_id;
    ClassMetrics kidney, tumor;
};

CaseReport evaluate_case(const LabelMask& pred, const LabelMask& truth,
                         const std::string& case_id);

struct MetricSummary {
    double mean = 0, median = 0, q1 = 0, q3 = 0, min = 0, max = 0;
    int n = 0;
};

struct CohortSummary {
    // metric name -> summary, per class; hausdorff aggregated over defined cases
    std::vector<std::pair<std::string, MetricSummary>> kidney, tumor;
    int cases = 0;
    int kidney_hausdorff_defined = 0, tumor_hausdorff_defined = 0;
};

CohortSummary evaluate_cohort(const std::vector<CaseReport>& reports);

void write_report_csv(const std::vector<CaseReport>& reports, const std::filesystem::path& path);
void write_summary_json(const CohortSummary& s, const std::filesystem::path& path);

/// Box plots of the five [0,1] metrics per class.
void write_boxplot_svg(const std::vector<CaseReport>& reports, const std::filesystem::path& path);

} // namespace voxseg
