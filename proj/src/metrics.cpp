#include "cpgait/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace cpgait::eval {

std::int64_t Confusion::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t Confusion::row_sum(int i) const {
    std::int64_t s = 0;
    for (int j = 0; j < K; ++j) s += at(i, j);
    return s;
}

std::int64_t Confusion::col_sum(int j) const {
    std::int64_t s = 0;
    for (int i = 0; i < K; ++i) s += at(i, j);
    return s;
}

Confusion confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred, int K) {
    require(K >= 1, "confusion_matrix: K must be positive");
    require(truth.size() == pred.size(), "confusion_matrix: truth/pred length mismatch");
    Confusion c(K);
    for (std::size_t n = 0; n < truth.size(); ++n) {
        require(truth[n] >= 0 && truth[n] < K, "confusion_matrix: truth label out of range");
        require(pred[n] >= 0 && pred[n] < K, "confusion_matrix: pred label out of range");
        ++c.at(truth[n], pred[n]);
    }
    return c;
}

double accuracy(const Confusion& c) {
    const std::int64_t n = c.total();
    require(n > 0, "accuracy: empty confusion");
    std::int64_t diag = 0;
    for (int i = 0; i < c.K; ++i) diag += c.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(n);
}

double weighted_f1(const Confusion& c) {
    const std::int64_t n = c.total();
    require(n > 0, "weighted_f1: empty confusion");
    double acc = 0.0;
    for (int k = 0; k < c.K; ++k) {
        const std::int64_t support = c.row_sum(k);
        if (support == 0) continue;
        const std::int64_t predicted = c.col_sum(k);
        const double p = predicted > 0 ? static_cast<double>(c.at(k, k)) / predicted : 0.0;
        const double r = static_cast<double>(c.at(k, k)) / support;
        const double f1 = (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        acc += f1 * (static_cast<double>(support) / n);
    }
    return acc;
}

double linear_kappa(const Confusion& c) {
    require(c.K >= 2, "linear_kappa: needs at least two classes");
    const std::int64_t n = c.total();
    require(n > 0, "linear_kappa: empty confusion");
    // kappa = 1 - sum(v*O)/sum(v*E) with v_ij = |i-j|/(K-1). The K-1 factor and
    // the N normalizations cancel, leaving exact integer sums:
    //   num = N * sum |i-j| * c_ij,   den = sum |i-j| * row_i * col_j.
    std::int64_t num = 0;
    std::int64_t den = 0;
    for (int i = 0; i < c.K; ++i) {
        for (int j = 0; j < c.K; ++j) {
            const std::int64_t v = std::abs(i - j);
            num += v * c.at(i, j);
            den += v * c.row_sum(i) * c.col_sum(j);
        }
    }
    num *= n;
    if (den == 0) {
        require(num == 0, "linear_kappa: observed disagreement with zero expected disagreement");
        return 1.0;
    }
    return 1.0 - static_cast<double>(num) / static_cast<double>(den);
}

PerClass per_class_recall(const Confusion& c) {
    require(c.K >= 1, "per_class_recall: empty confusion");
    PerClass out;
    out.value.resize(c.K, 0.0);
    out.present.resize(c.K, false);
    for (int k = 0; k < c.K; ++k) {
        const std::int64_t support = c.row_sum(k);
        if (support == 0) continue;
        out.value[k] = static_cast<double>(c.at(k, k)) / support;
        out.present[k] = true;
    }
    return out;
}

namespace {

// Rank-statistic AUC with average ranks for ties: ties contribute 1/2.
double auc_from_scores(const std::vector<double>& score, const std::vector<char>& is_pos) {
    const std::size_t n = score.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
    std::vector<double> rank(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
        i = j + 1;
    }
    double rank_pos = 0.0;
    std::int64_t p = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (is_pos[k]) {
            rank_pos += rank[k];
            ++p;
        }
    }
    const std::int64_t q = static_cast<std::int64_t>(n) - p;
    return (rank_pos - 0.5 * p * (p + 1.0)) / (static_cast<double>(p) * q);
}

}  // namespace

PerClass roc_auc_ovr(const std::vector<std::vector<double>>& probs, const std::vector<int>& truth,
                     int K) {
    require(K >= 2, "roc_auc_ovr: needs at least two classes");
    require(probs.size() == truth.size(), "roc_auc_ovr: probs/truth length mismatch");
    for (const auto& row : probs) {
        require(static_cast<int>(row.size()) == K, "roc_auc_ovr: row width != K");
        const double s = std::accumulate(row.begin(), row.end(), 0.0);
        require(std::abs(s - 1.0) <= 1e-6, "roc_auc_ovr: probability row does not sum to 1");
    }
    PerClass out;
    out.value.resize(K, 0.0);
    out.present.resize(K, false);
    const std::size_t n = probs.size();
    for (int k = 0; k < K; ++k) {
        std::vector<double> score(n);
        std::vector<char> pos(n);
        std::int64_t np = 0;
        for (std::size_t i = 0; i < n; ++i) {
            require(truth[i] >= 0 && truth[i] < K, "roc_auc_ovr: truth label out of range");
            score[i] = probs[i][k];
            pos[i] = truth[i] == k ? 1 : 0;
            np += pos[i];
        }
        if (np == 0 || np == static_cast<std::int64_t>(n)) continue;
        out.value[k] = auc_from_scores(score, pos);
        out.present[k] = true;
    }
    return out;
}

std::vector<RocPoint> roc_points(const std::vector<double>& score, const std::vector<char>& is_pos) {
    require(score.size() == is_pos.size(), "roc_points: length mismatch");
    require(!score.empty(), "roc_points: empty input");
    std::int64_t p = 0;
    for (char b : is_pos) p += b ? 1 : 0;
    const std::int64_t q = static_cast<std::int64_t>(score.size()) - p;
    require(p > 0 && q > 0, "roc_points: needs both positives and negatives");
    std::vector<std::size_t> order(score.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    std::vector<RocPoint> out;
    out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && score[order[j + 1]] == score[order[i]]) ++j;
        for (std::size_t k = i; k <= j; ++k) {
            if (is_pos[order[k]])
                ++tp;
            else
                ++fp;
        }
        out.push_back({score[order[i]], static_cast<double>(tp) / p, static_cast<double>(fp) / q});
        i = j + 1;
    }
    return out;
}

EvalReport evaluate_predictions(const std::vector<int>& truth, const std::vector<int>& pred,
                                const std::vector<std::vector<double>>& probs, int K) {
    EvalReport r;
    r.confusion = confusion_matrix(truth, pred, K);
    r.accuracy = accuracy(r.confusion);
    r.weighted_f1 = weighted_f1(r.confusion);
    r.kappa_l = linear_kappa(r.confusion);
    r.recall = per_class_recall(r.confusion);
    if (!probs.empty()) r.auc = roc_auc_ovr(probs, truth, K);
    r.support.resize(K);
    for (int k = 0; k < K; ++k) r.support[k] = r.confusion.row_sum(k);
    return r;
}

void save_confusion_csv(const std::string& path, const Confusion& c, bool row_percent) {
    std::ofstream out(path);
    validate(out.good(), "cannot open " + path + " for writing");
    out << "truth";
    for (int j = 0; j < c.K; ++j) out << ",pred_" << (j + 1);
    out << "\n";
    char buf[64];
    for (int i = 0; i < c.K; ++i) {
        out << (i + 1);
        const std::int64_t rs = c.row_sum(i);
        for (int j = 0; j < c.K; ++j) {
            if (row_percent) {
                const double pct = rs > 0 ? 100.0 * c.at(i, j) / rs : 0.0;
                std::snprintf(buf, sizeof buf, "%.2f", pct);
                out << ',' << buf;
            } else {
                out << ',' << c.at(i, j);
            }
        }
        out << "\n";
    }
    validate(out.good(), "write failed for " + path);
}

void save_roc_csv(const std::string& path, const std::vector<RocPoint>& points) {
    std::ofstream out(path);
    validate(out.good(), "cannot open " + path + " for writing");
    out << "threshold,tpr,fpr\n";
    char buf[160];
    for (const auto& pt : points) {
        if (std::isinf(pt.threshold))
            std::snprintf(buf, sizeof buf, "inf,%.9f,%.9f", pt.tpr, pt.fpr);
        else
            std::snprintf(buf, sizeof buf, "%.9g,%.9f,%.9f", pt.threshold, pt.tpr, pt.fpr);
        out << buf << "\n";
    }
    validate(out.good(), "write failed for " + path);
}

void save_report_txt(const std::string& path, const std::string& run_name, const EvalReport& r) {
    std::ofstream out(path);
    validate(out.good(), "cannot open " + path + " for writing");
    char buf[160];
    out << "run: " << run_name << "\n";
    out << "samples: " << r.confusion.total() << "\n";
    std::snprintf(buf, sizeof buf, "accuracy: %.4f\nweighted_f1: %.4f\nkappa_l: %.4f", r.accuracy,
                  r.weighted_f1, r.kappa_l);
    out << buf << "\n";
    for (int k = 0; k < r.confusion.K; ++k) {
        out << "recall_class_" << (k + 1) << ": ";
        if (r.recall.present[k]) {
            std::snprintf(buf, sizeof buf, "%.4f", r.recall.value[k]);
            out << buf;
        } else {
            out << "absent";
        }
        out << " (support " << r.support[k] << ")\n";
    }
    if (!r.auc.value.empty()) {
        for (int k = 0; k < r.confusion.K; ++k) {
            out << "auc_class_" << (k + 1) << ": ";
            if (r.auc.present[k]) {
                std::snprintf(buf, sizeof buf, "%.4f", r.auc.value[k]);
                out << buf;
            } else {
                out << "absent";
            }
            out << "\n";
        }
    }
    validate(out.good(), "write failed for " + path);
}

}  // namespace cpgait::eval
