#pragma once

#include <cmath>
#include <cstddef>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "escape/common.hpp"
#include "escape/tta.hpp"

namespace escape {

struct SampleRow {
    std::string id;
    double energy = 0.0;
    bool is_ood = false;
    PipelinePath path = PipelinePath::fast;
    bool skipped = false;
    std::string diagnostic;
    bool has_gt = false;
    double pre_distal = 0.0, post_distal = 0.0;
    double pre_mpjpe = 0.0, post_mpjpe = 0.0;
    double pre_pa = 0.0, post_pa = 0.0;
    std::vector<double> ltt_trace;
    double elapsed_us = 0.0;
};

struct Aggregates {
    std::size_t total = 0;
    std::size_t fast_count = 0;
    std::size_t adapted_count = 0;
    std::size_t skipped_count = 0;
    std::size_t with_gt = 0;
    double mean_pre_distal = 0.0, mean_post_distal = 0.0, distal_delta = 0.0;
    double mean_pre_mpjpe = 0.0, mean_post_mpjpe = 0.0, mpjpe_delta = 0.0;
    double mean_pre_pa = 0.0, mean_post_pa = 0.0, pa_delta = 0.0;
    double mean_elapsed_fast_us = 0.0;
    double mean_elapsed_adapted_us = 0.0;
    double mean_elapsed_us = 0.0;
    double total_elapsed_us = 0.0;

    bool close_to(const Aggregates& o) const {
        auto eq = [](double a, double b) {
            if (std::isnan(a) && std::isnan(b)) return true;
            return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
        };
        return total == o.total && fast_count == o.fast_count &&
               adapted_count == o.adapted_count && skipped_count == o.skipped_count &&
               with_gt == o.with_gt && eq(mean_pre_distal, o.mean_pre_distal) &&
               eq(mean_post_distal, o.mean_post_distal) && eq(distal_delta, o.distal_delta) &&
               eq(mean_pre_mpjpe, o.mean_pre_mpjpe) && eq(mean_post_mpjpe, o.mean_post_mpjpe) &&
               eq(mpjpe_delta, o.mpjpe_delta) && eq(mean_pre_pa, o.mean_pre_pa) &&
               eq(mean_post_pa, o.mean_post_pa) && eq(pa_delta, o.pa_delta) &&
               eq(mean_elapsed_fast_us, o.mean_elapsed_fast_us) &&
               eq(mean_elapsed_adapted_us, o.mean_elapsed_adapted_us) &&
               eq(mean_elapsed_us, o.mean_elapsed_us) && eq(total_elapsed_us, o.total_elapsed_us);
    }
};

inline Aggregates compute_aggregates(const std::vector<SampleRow>& rows) {
    Aggregates a;
    a.total = rows.size();
    double el_fast = 0.0, el_adapted = 0.0, el_total = 0.0;
    for (const auto& r : rows) {
        if (r.skipped) {
            a.skipped_count += 1;
            continue;
        }
        el_total += r.elapsed_us;
        if (r.path == PipelinePath::adapted) {
            a.adapted_count += 1;
            el_adapted += r.elapsed_us;
        } else {
            a.fast_count += 1;
            el_fast += r.elapsed_us;
        }
        if (r.has_gt) {
            a.with_gt += 1;
            a.mean_pre_distal += r.pre_distal;
            a.mean_post_distal += r.post_distal;
            a.mean_pre_mpjpe += r.pre_mpjpe;
            a.mean_post_mpjpe += r.post_mpjpe;
            a.mean_pre_pa += r.pre_pa;
            a.mean_post_pa += r.post_pa;
        }
    }
    const double ng = static_cast<double>(a.with_gt);
    if (a.with_gt > 0) {
        a.mean_pre_distal /= ng;
        a.mean_post_distal /= ng;
        a.mean_pre_mpjpe /= ng;
        a.mean_post_mpjpe /= ng;
        a.mean_pre_pa /= ng;
        a.mean_post_pa /= ng;
        a.distal_delta = a.mean_post_distal - a.mean_pre_distal;
        a.mpjpe_delta = a.mean_post_mpjpe - a.mean_pre_mpjpe;
        a.pa_delta = a.mean_post_pa - a.mean_pre_pa;
    }
    const std::size_t processed = a.fast_count + a.adapted_count;
    a.mean_elapsed_fast_us = a.fast_count ? el_fast / static_cast<double>(a.fast_count) : 0.0;
    a.mean_elapsed_adapted_us =
        a.adapted_count ? el_adapted / static_cast<double>(a.adapted_count) : 0.0;
    a.mean_elapsed_us = processed ? el_total / static_cast<double>(processed) : 0.0;
    a.total_elapsed_us = el_total;
    return a;
}

struct RunReport {
    std::vector<std::pair<std::string, std::string>> config_echo;
    std::vector<SampleRow> rows;
    Aggregates aggregates;
};

namespace detail {

inline std::string join_trace(const std::vector<double>& trace) {
    std::string s;
    char buf[32];
    for (std::size_t i = 0; i < trace.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6g", trace[i]);
        if (i) s += ';';
        s += buf;
    }
    return s;
}

inline std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

// CSV with a config-echo header and a trailing aggregate block. Recomputes
// the aggregates from the rows before writing and refuses to emit a report
// that disagrees with itself.
inline void emit_report_csv(const RunReport& report, std::ostream& os) {
    const Aggregates check = compute_aggregates(report.rows);
    if (!check.close_to(report.aggregates))
        throw Error("emit_report_csv: aggregates do not match per-sample rows");

    os << "# escape-run-report v1\n";
    for (const auto& [k, v] : report.config_echo) os << "# " << k << ": " << v << "\n";
    os << "id,energy,decision,path,pre_distal,post_distal,pre_mpjpe,post_mpjpe,pre_pa,post_pa,"
          "ltt_trace,elapsed_us,skipped\n";
    for (const auto& r : report.rows) {
        os << r.id << ',' << detail::fmt(r.energy) << ',' << (r.is_ood ? "ood" : "id") << ','
           << (r.path == PipelinePath::adapted ? "adapted" : "fast") << ',';
        if (r.has_gt) {
            os << detail::fmt(r.pre_distal) << ',' << detail::fmt(r.post_distal) << ','
               << detail::fmt(r.pre_mpjpe) << ',' << detail::fmt(r.post_mpjpe) << ','
               << detail::fmt(r.pre_pa) << ',' << detail::fmt(r.post_pa) << ',';
        } else {
            os << ",,,,,,";
        }
        os << detail::join_trace(r.ltt_trace) << ',' << detail::fmt(r.elapsed_us) << ','
           << (r.skipped ? "1" : "0") << "\n";
    }
    const Aggregates& a = report.aggregates;
    os << "# aggregate total: " << a.total << "\n";
    os << "# aggregate fast: " << a.fast_count << "\n";
    os << "# aggregate adapted: " << a.adapted_count << "\n";
    os << "# aggregate skipped: " << a.skipped_count << "\n";
    os << "# aggregate with_gt: " << a.with_gt << "\n";
    os << "# aggregate pre_distal_mean: " << detail::fmt(a.mean_pre_distal) << "\n";
    os << "# aggregate post_distal_mean: " << detail::fmt(a.mean_post_distal) << "\n";
    os << "# aggregate distal_delta: " << detail::fmt(a.distal_delta) << "\n";
    os << "# aggregate pre_mpjpe_mean: " << detail::fmt(a.mean_pre_mpjpe) << "\n";
    os << "# aggregate post_mpjpe_mean: " << detail::fmt(a.mean_post_mpjpe) << "\n";
    os << "# aggregate mpjpe_delta: " << detail::fmt(a.mpjpe_delta) << "\n";
    os << "# aggregate pre_pa_mean: " << detail::fmt(a.mean_pre_pa) << "\n";
    os << "# aggregate post_pa_mean: " << detail::fmt(a.mean_post_pa) << "\n";
    os << "# aggregate pa_delta: " << detail::fmt(a.pa_delta) << "\n";
    os << "# aggregate mean_elapsed_fast_us: " << detail::fmt(a.mean_elapsed_fast_us) << "\n";
    os << "# aggregate mean_elapsed_adapted_us: " << detail::fmt(a.mean_elapsed_adapted_us) << "\n";
    os << "# aggregate mean_elapsed_us: " << detail::fmt(a.mean_elapsed_us) << "\n";
    os << "# aggregate total_elapsed_us: " << detail::fmt(a.total_elapsed_us) << "\n";
}

} // namespace escape
