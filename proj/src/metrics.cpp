#include "steerlab/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {

void require_unit_interval(double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0))
        fail(ErrorCode::invalid_argument, std::string(name) + " must lie in [0, 1]");
}

}  // namespace

double fluency_score(double ppl) {
    if (!(ppl >= 1.0))
        fail(ErrorCode::invalid_argument, "perplexity below 1 would push the score above 1");
    return 1.0 / (1.0 + std::log(ppl));
}

double overall_assessment(double si, double sp, double fs) {
    require_unit_interval(si, "si");
    require_unit_interval(sp, "sp");
    require_unit_interval(fs, "fs");
    return si * sp * fs;
}

double ti_fraction(const std::vector<bool>& truthful, const std::vector<bool>& informative) {
    if (truthful.size() != informative.size())
        fail(ErrorCode::invalid_argument, "flag arrays differ in length");
    if (truthful.empty()) fail(ErrorCode::empty_input, "no samples");
    size_t both = 0;
    for (size_t i = 0; i < truthful.size(); ++i) both += (truthful[i] && informative[i]);
    return double(both) / double(truthful.size());
}

double s_ti(double oa, double ti) {
    require_unit_interval(oa, "oa");
    require_unit_interval(ti, "ti");
    double sum = oa + ti;
    if (sum == 0.0) return 0.0;
    return 2.0 * oa * ti / sum;
}

double judge_fraction(const std::vector<double>& logit_yes, const std::vector<double>& logit_no) {
    if (logit_yes.size() != logit_no.size())
        fail(ErrorCode::invalid_argument, "logit arrays differ in length");
    if (logit_yes.empty()) fail(ErrorCode::empty_input, "no samples");
    size_t yes = 0;
    for (size_t i = 0; i < logit_yes.size(); ++i) yes += (logit_yes[i] > logit_no[i]);
    return double(yes) / double(logit_yes.size());
}

MetricReport compute_metric_report(const json& components) {
    MetricReport r;
    try {
        r.si = components.at("si").get<double>();
        r.sp = components.at("sp").get<double>();

        if (components.contains("fs"))
            r.fs = components.at("fs").get<double>();
        else if (components.contains("ppl"))
            r.fs = fluency_score(components.at("ppl").get<double>());
        else
            fail(ErrorCode::config_error, "component scores need either fs or ppl");

        if (components.contains("truth_flags") || components.contains("info_flags")) {
            auto truth_flags = components.at("truth_flags").get<std::vector<bool>>();
            auto info_flags = components.at("info_flags").get<std::vector<bool>>();
            r.ti = ti_fraction(truth_flags, info_flags);
            size_t nt = 0, ni = 0;
            for (bool b : truth_flags) nt += b;
            for (bool b : info_flags) ni += b;
            r.truth = double(nt) / double(truth_flags.size());
            r.info = double(ni) / double(info_flags.size());
        } else if (components.contains("ti")) {
            r.ti = components.at("ti").get<double>();
            r.truth = components.value("truth", 0.0);
            r.info = components.value("info", 0.0);
        } else {
            fail(ErrorCode::config_error, "component scores need either ti or truth/info flags");
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::config_error, "bad component scores: " + std::string(e.what()));
    }

    require_unit_interval(r.ti, "ti");
    r.oa = overall_assessment(r.si, r.sp, r.fs);
    r.s_ti = s_ti(r.oa, r.ti);
    return r;
}

json metric_report_to_json(const MetricReport& r) {
    return json{{"si", r.si}, {"sp", r.sp},       {"fs", r.fs}, {"oa", r.oa},
                {"truth", r.truth}, {"info", r.info}, {"ti", r.ti}, {"s_ti", r.s_ti}};
}

}  // namespace steerlab
