// Classification metrics: confusion matrix, accuracy, weighted F1, linearly
// weighted Cohen's kappa, per-class recall, one-vs-rest ROC AUC, ROC points.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cpgait/common.hpp"

namespace cpgait::eval {

// Rows are truth, columns prediction; classes indexed 0..K-1.
struct Confusion {
    int K = 0;
    std::vector<std::int64_t> counts;  // K*K row-major

    explicit Confusion(int k = 0) : K(k), counts(static_cast<std::size_t>(k) * k, 0) {}
    std::int64_t& at(int i, int j) { return counts[static_cast<std::size_t>(i) * K + j]; }
    std::int64_t at(int i, int j) const { return counts[static_cast<std::size_t>(i) * K + j]; }
    std::int64_t total() const;
    std::int64_t row_sum(int i) const;
    std::int64_t col_sum(int j) const;
};

Confusion confusion_matrix(const std::vector<int>& truth, const std::vector<int>& pred, int K);

double accuracy(const Confusion& c);

// Per-class F1 averaged with support weights; zero-support classes weigh 0.
double weighted_f1(const Confusion& c);

// Linear penalty |i-j|/(K-1); exact integer accumulation of both sums.
// All mass on the diagonal of a single class -> 1; zero expected disagreement
// with observed disagreement -> contract error.
double linear_kappa(const Confusion& c);

// diagonal / row sum; empty rows report 0 with present=false.
struct PerClass {
    std::vector<double> value;
    std::vector<bool> present;
};
PerClass per_class_recall(const Confusion& c);

// One-vs-rest AUC per class from N x K probability rows (each summing to 1
// within 1e-6); rank statistic with average ranks so ties count 1/2. Classes
// with zero positives or zero negatives are absent.
PerClass roc_auc_ovr(const std::vector<std::vector<double>>& probs, const std::vector<int>& truth,
                     int K);

struct RocPoint {
    double threshold = 0.0;
    double tpr = 0.0;
    double fpr = 0.0;
};
// Points swept from the highest score down; TPR/FPR are nondecreasing.
std::vector<RocPoint> roc_points(const std::vector<double>& score, const std::vector<char>& is_pos);

struct EvalReport {
    Confusion confusion;
    double accuracy = 0.0;
    double weighted_f1 = 0.0;
    double kappa_l = 0.0;
    PerClass recall;
    PerClass auc;
    std::vector<std::int64_t> support;  // per-class truth counts
};

EvalReport evaluate_predictions(const std::vector<int>& truth, const std::vector<int>& pred,
                                const std::vector<std::vector<double>>& probs, int K);

// Report files: raw-count confusion CSV, row-normalized percentage CSV,
// per-class ROC point CSVs and a plain-text summary (Acc, F1_w, kappa_l).
void save_confusion_csv(const std::string& path, const Confusion& c, bool row_percent);
void save_roc_csv(const std::string& path, const std::vector<RocPoint>& points);
void save_report_txt(const std::string& path, const std::string& run_name, const EvalReport& r);

}  // namespace cpgait::eval
