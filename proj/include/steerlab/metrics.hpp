#pragma once

#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// Composite evaluation metrics. Component scores (si, sp, truth/info flags or
// an externally measured perplexity) come from input files; everything here
// is a pure function of them.

struct MetricReport {
    double si = 0.0;
    double sp = 0.0;
    double fs = 0.0;
    double oa = 0.0;
    double truth = 0.0;
    double info = 0.0;
    double ti = 0.0;
    double s_ti = 0.0;
};

// 1 / (1 + ln ppl); rejects ppl < 1 so the score stays in (0, 1]
double fluency_score(double ppl);

// si * sp * fs, all in [0, 1]
double overall_assessment(double si, double sp, double fs);

// fraction of samples flagged both truthful and informative
double ti_fraction(const std::vector<bool>& truthful, const std::vector<bool>& informative);

// harmonic mean of oa and ti; 0 when both are 0
double s_ti(double oa, double ti);

// fraction with logit_yes strictly above logit_no (ties count as no)
double judge_fraction(const std::vector<double>& logit_yes, const std::vector<double>& logit_no);

// Builds a full report from a component-score JSON object:
//   { "si": .., "sp": .., "fs": .. | "ppl": ..,
//     "ti": .. | "truth_flags": [...], "info_flags": [...] }
MetricReport compute_metric_report(const json& components);
json metric_report_to_json(const MetricReport& report);

}  // namespace steerlab
