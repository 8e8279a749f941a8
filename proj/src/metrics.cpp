#include "crownseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "crownseg/binary_io.hpp"
#include "crownseg/error.hpp"

namespace crownseg {

std::uint64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0}); }

std::uint64_t ConfusionMatrix::row_total(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < classes; ++j) s += (*this)(c, j);
    return s;
}

std::uint64_t ConfusionMatrix::col_total(std::size_t c) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < classes; ++i) s += (*this)(i, c);
    return s;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.classes != classes) throw DimensionError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionMatrix confusion(std::span<const std::int32_t> pred, std::span<const std::int32_t> ref, std::size_t classes) {
    if (pred.size() != ref.size()) throw DimensionError("prediction and reference sizes differ");
    ConfusionMatrix cm(classes);
    const auto C = static_cast<std::int32_t>(classes);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        if (ref[i] < 0) continue;
        if (ref[i] >= C) throw ValidationError("reference label " + std::to_string(ref[i]) + " out of range");
        if (pred[i] < 0 || pred[i] >= C)
            throw ValidationError("predicted label " + std::to_string(pred[i]) + " out of range");
        ++cm(static_cast<std::size_t>(ref[i]), static_cast<std::size_t>(pred[i]));
    }
    if (cm.total() == 0) throw EmptyEvaluationError("no labeled reference pixels to evaluate");
    return cm;
}

ConfusionMatrix confusion(const LabelMask& pred, const LabelMask& ref, std::size_t classes) {
    if (pred.width != ref.width || pred.height != ref.height)
        throw DimensionError("prediction and reference extents differ");
    return confusion(std::span<const std::int32_t>(pred.data), std::span<const std::int32_t>(ref.data), classes);
}

namespace {

double mean_defined(const std::vector<std::optional<double>>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& x : v)
        if (x) {
            s += *x;
            ++n;
        }
    return n ? s / static_cast<double>(n) : 0.0;
}

} // namespace

SummaryMetrics summary_metrics(const ConfusionMatrix& cm) {
    const auto total = cm.total();
    if (total == 0) throw EmptyEvaluationError("confusion matrix is empty");
    const double n = static_cast<double>(total);
    SummaryMetrics m;
    double trace = 0.0, pe = 0.0;
    for (std::size_t c = 0; c < cm.classes; ++c) {
        const double diag = static_cast<double>(cm(c, c));
        const double row = static_cast<double>(cm.row_total(c));
        const double col = static_cast<double>(cm.col_total(c));
        trace += diag;
        pe += row * col;
        std::optional<double> pa, ua, f1;
        if (row > 0)
            pa = diag / row;
        else
            m.warnings.push_back("class " + std::to_string(c) + ": no reference pixels, PA undefined");
        if (col > 0)
            ua = diag / col;
        else
            m.warnings.push_back("class " + std::to_string(c) + ": never predicted, UA undefined");
        if (pa && ua) f1 = (*pa + *ua) > 0.0 ? 2.0 * *pa * *ua / (*pa + *ua) : 0.0;
        m.pa.push_back(pa);
        m.ua.push_back(ua);
        m.f1.push_back(f1);
    }
    m.oa = trace / n;
    pe /= n * n;
    m.kappa = pe < 1.0 ? (m.oa - pe) / (1.0 - pe) : 1.0;
    m.macro_ua = mean_defined(m.ua);
    m.macro_pa = mean_defined(m.pa);
    m.macro_f1 = mean_defined(m.f1);
    return m;
}

EntropyStats entropy_stats(const ProbabilityVolume& probs, const LabelMask& ref, std::size_t bins) {
    if (probs.width != ref.width || probs.height != ref.height)
        throw DimensionError("probability volume and reference extents differ");
    if (bins == 0) throw ParameterError("histogram needs at least one bin");
    const std::size_t C = probs.classes, plane = probs.width * probs.height;
    EntropyStats st;
    st.bins = bins;
    st.top_k = std::min<std::size_t>(3, C);
    st.entropy = Grid<double>(probs.width, probs.height, 0.0);
    st.histogram.assign(C, std::vector<std::uint64_t>(st.top_k * bins, 0));
    std::vector<std::pair<float, std::size_t>> ranked(C);
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
        double h = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double p = probs.data[c * plane + i];
            if (p > 0.0) h -= p * std::log(p);
            ranked[c] = {probs.data[c * plane + i], c};
        }
        st.entropy.data[i] = h;
        sum += h;
        const auto r = ref.data[i];
        if (r < 0) continue;
        // stable sort keeps lower class ids first on ties, matching argmax
        std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        if (ranked[0].second != static_cast<std::size_t>(r)) continue;
        for (std::size_t k = 0; k < st.top_k; ++k) {
            auto b = static_cast<std::size_t>(std::clamp(ranked[k].first, 0.0f, 1.0f) * static_cast<float>(bins));
            b = std::min(b, bins - 1);
            ++st.histogram[static_cast<std::size_t>(r)][k * bins + b];
        }
    }
    st.mean_entropy = plane ? sum / static_cast<double>(plane) : 0.0;
    return st;
}

namespace {

std::string opt_real(const std::optional<double>& v) { return v ? format_real(*v) : "undefined"; }

} // namespace

std::string format_metrics_report(const SummaryMetrics& m) {
    std::string s;
    s += "oa=" + format_real(m.oa) + "\n";
    s += "kappa=" + format_real(m.kappa) + "\n";
    s += "macro_ua=" + format_real(m.macro_ua) + "\n";
    s += "macro_pa=" + format_real(m.macro_pa) + "\n";
    s += "macro_f1=" + format_real(m.macro_f1) + "\n";
    for (const auto& w : m.warnings) s += "warning=" + w + "\n";
    for (std::size_t c = 0; c < m.f1.size(); ++c) {
        s += "\n[class " + std::to_string(c) + "]\n";
        s += "ua=" + opt_real(m.ua[c]) + "\n";
        s += "pa=" + opt_real(m.pa[c]) + "\n";
        s += "f1=" + opt_real(m.f1[c]) + "\n";
    }
    return s;
}

std::string format_confusion_csv(const ConfusionMatrix& cm) {
    std::string s;
    for (std::size_t i = 0; i < cm.classes; ++i) {
        for (std::size_t j = 0; j < cm.classes; ++j) {
            if (j) s += ',';
            s += std::to_string(cm(i, j));
        }
        s += '\n';
    }
    return s;
}

} // namespace crownseg
