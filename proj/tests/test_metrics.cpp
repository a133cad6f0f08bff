#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cpgait/common.hpp"
#include "cpgait/metrics.hpp"

using namespace cpgait;
using namespace cpgait::eval;

namespace {

Confusion from_rows(const std::vector<std::vector<std::int64_t>>& rows) {
    Confusion c(static_cast<int>(rows.size()));
    for (int i = 0; i < c.K; ++i)
        for (int j = 0; j < c.K; ++j) c.at(i, j) = rows[i][j];
    return c;
}

Confusion random_confusion(Rng& rng, int K, bool allow_empty_rows) {
    Confusion c(K);
    for (int i = 0; i < K; ++i) {
        if (allow_empty_rows && rng.uniform() < 0.2) continue;
        for (int j = 0; j < K; ++j) c.at(i, j) = static_cast<std::int64_t>(rng.uniform() * 21.0);
    }
    if (c.total() == 0) c.at(0, 0) = 1;
    return c;
}

// Independent F1 oracle: literal per-class precision/recall loops.
double brute_weighted_f1(const Confusion& c) {
    const double n = static_cast<double>(c.total());
    double out = 0.0;
    for (int k = 0; k < c.K; ++k) {
        double support = 0.0;
        double predicted = 0.0;
        for (int j = 0; j < c.K; ++j) support += static_cast<double>(c.at(k, j));
        for (int i = 0; i < c.K; ++i) predicted += static_cast<double>(c.at(i, k));
        if (support == 0.0) continue;
        const double tp = static_cast<double>(c.at(k, k));
        const double p = predicted > 0.0 ? tp / predicted : 0.0;
        const double r = tp / support;
        const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
        out += (support / n) * f1;
    }
    return out;
}

// Independent kappa oracle #1: double-sum over observed/expected proportions.
double brute_kappa_proportions(const Confusion& c) {
    const double n = static_cast<double>(c.total());
    std::vector<double> row(c.K, 0.0);
    std::vector<double> col(c.K, 0.0);
    for (int i = 0; i < c.K; ++i)
        for (int j = 0; j < c.K; ++j) {
            row[i] += c.at(i, j) / n;
            col[j] += c.at(i, j) / n;
        }
    double vo = 0.0;
    double ve = 0.0;
    for (int i = 0; i < c.K; ++i)
        for (int j = 0; j < c.K; ++j) {
            const double v = std::abs(i - j) / static_cast<double>(c.K - 1);
            vo += v * (c.at(i, j) / n);
            ve += v * (row[i] * col[j]);
        }
    if (ve == 0.0) return vo == 0.0 ? 1.0 : std::nan("");
    return 1.0 - vo / ve;
}

// Independent kappa oracle #2: same integers as the exact cancellation form,
// accumulated marginals-first in a separate pass.
double brute_kappa_integer(const Confusion& c) {
    std::vector<std::int64_t> row(c.K, 0);
    std::vector<std::int64_t> col(c.K, 0);
    for (int i = 0; i < c.K; ++i)
        for (int j = 0; j < c.K; ++j) {
            row[i] += c.at(i, j);
            col[j] += c.at(i, j);
        }
    std::int64_t num = 0;
    std::int64_t den = 0;
    for (int i = 0; i < c.K; ++i)
        for (int j = 0; j < c.K; ++j) {
            num += std::abs(i - j) * c.at(i, j);
            den += std::abs(i - j) * row[i] * col[j];
        }
    num *= c.total();
    if (den == 0) return num == 0 ? 1.0 : std::nan("");
    return 1.0 - static_cast<double>(num) / static_cast<double>(den);
}

// Independent AUC oracle: count over all positive/negative pairs.
double brute_auc_pairs(const std::vector<double>& score, const std::vector<char>& pos) {
    double wins = 0.0;
    std::int64_t pairs = 0;
    for (std::size_t a = 0; a < score.size(); ++a) {
        if (!pos[a]) continue;
        for (std::size_t b = 0; b < score.size(); ++b) {
            if (pos[b]) continue;
            ++pairs;
            if (score[a] > score[b])
                wins += 1.0;
            else if (score[a] == score[b])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_CASE("confusion matrix basics and contract errors") {
    const Confusion perfect = confusion_matrix({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(perfect.at(i, j) == (i == j ? (i == 1 ? 2 : 1) : 0));

    const Confusion anti = confusion_matrix({0, 1}, {1, 0}, 2);
    CHECK(anti.at(0, 1) == 1);
    CHECK(anti.at(1, 0) == 1);
    CHECK(anti.at(0, 0) == 0);
    CHECK(anti.at(1, 1) == 0);

    Rng rng(11);
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 2 + static_cast<int>(rng.uniform() * 4.0);
        const int n = 1 + static_cast<int>(rng.uniform() * 100.0);
        std::vector<int> truth(n);
        std::vector<int> pred(n);
        for (int i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng.uniform() * k);
            pred[i] = static_cast<int>(rng.uniform() * k);
        }
        CHECK(confusion_matrix(truth, pred, k).total() == n);
    }

    CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 1}, 3), ContractError);
    CHECK_THROWS_AS(confusion_matrix({0, -1}, {0, 1}, 3), ContractError);
    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}, 2), ContractError);
    CHECK_THROWS_AS(confusion_matrix({}, {}, 0), ContractError);
}

TEST_CASE("accuracy equals trace over N on random inputs") {
    Rng rng(23);
    for (int rep = 0; rep < 50; ++rep) {
        const int k = 2 + static_cast<int>(rng.uniform() * 4.0);
        const int n = 1 + static_cast<int>(rng.uniform() * 200.0);
        std::vector<int> truth(n);
        std::vector<int> pred(n);
        int hits = 0;
        for (int i = 0; i < n; ++i) {
            truth[i] = static_cast<int>(rng.uniform() * k);
            pred[i] = static_cast<int>(rng.uniform() * k);
            hits += truth[i] == pred[i] ? 1 : 0;
        }
        const double a = accuracy(confusion_matrix(truth, pred, k));
        CHECK(a == static_cast<double>(hits) / n);
    }
    CHECK_THROWS_AS(accuracy(Confusion(3)), ContractError);
}

TEST_CASE("weighted F1 hand cases and zero-support exclusion") {
    const Confusion diag = from_rows({{4, 0, 0}, {0, 2, 0}, {0, 0, 5}});
    CHECK(weighted_f1(diag) == 1.0);

    const Confusion c = from_rows({{8, 2}, {3, 7}});
    const double f1_0 = 2.0 * (8.0 / 11.0) * (8.0 / 10.0) / (8.0 / 11.0 + 8.0 / 10.0);
    const double f1_1 = 2.0 * (7.0 / 9.0) * (7.0 / 10.0) / (7.0 / 9.0 + 7.0 / 10.0);
    const double expect = (10.0 / 20.0) * f1_0 + (10.0 / 20.0) * f1_1;
    CHECK(weighted_f1(c) == doctest::Approx(expect).epsilon(1e-12));

    // Padding with an empty class row+column leaves the value unchanged.
    const Confusion padded = from_rows({{8, 2, 0}, {3, 7, 0}, {0, 0, 0}});
    CHECK(weighted_f1(padded) == weighted_f1(c));

    // A class that is predicted but never true carries weight zero.
    const Confusion ghost = from_rows({{5, 0, 1}, {0, 6, 2}, {0, 0, 0}});
    const double direct = brute_weighted_f1(ghost);
    CHECK(weighted_f1(ghost) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("weighted F1 matches brute force on random confusions") {
    Rng rng(37);
    double worst = 0.0;
    for (int rep = 0; rep < 500; ++rep) {
        const int k = 2 + static_cast<int>(rng.uniform() * 5.0);
        const Confusion c = random_confusion(rng, k, true);
        const double got = weighted_f1(c);
        const double want = brute_weighted_f1(c);
        worst = std::max(worst, std::abs(got - want));
        CHECK(got >= 0.0);
        CHECK(got <= 1.0 + 1e-12);
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("linear kappa hand cases") {
    const Confusion diag = from_rows({{3, 0, 0, 0}, {0, 9, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 6}});
    CHECK(linear_kappa(diag) == 1.0);

    const Confusion coin = from_rows({{1, 1}, {1, 1}});
    CHECK(linear_kappa(coin) == 0.0);

    // All mass in one diagonal cell: zero expected and observed disagreement.
    Confusion lone(3);
    lone.at(1, 1) = 7;
    CHECK(linear_kappa(lone) == 1.0);

    // All mass in one off-diagonal cell: observed equals expected disagreement.
    Confusion off(3);
    off.at(0, 2) = 5;
    CHECK(linear_kappa(off) == 0.0);

    CHECK_THROWS_AS(linear_kappa(from_rows({{4}})), ContractError);
    CHECK_THROWS_AS(linear_kappa(Confusion(2)), ContractError);
}

TEST_CASE("linear kappa matches brute-force double-sum on 1000 random matrices") {
    Rng rng(41);
    double worst_float = 0.0;
    for (int rep = 0; rep < 1000; ++rep) {
        const int k = 2 + static_cast<int>(rng.uniform() * 5.0);
        const Confusion c = random_confusion(rng, k, true);
        const double got = linear_kappa(c);
        CHECK(got == brute_kappa_integer(c));
        worst_float = std::max(worst_float, std::abs(got - brute_kappa_proportions(c)));
        CHECK(got >= -1.0 - 1e-12);
        CHECK(got <= 1.0 + 1e-12);
    }
    CHECK(worst_float <= 1e-12);
}

TEST_CASE("per-class recall hand cases") {
    const PerClass perfect = per_class_recall(from_rows({{2, 0}, {0, 9}}));
    CHECK(perfect.value == std::vector<double>{1.0, 1.0});
    CHECK(perfect.present == std::vector<bool>{true, true});

    const PerClass partial = per_class_recall(from_rows({{3, 1}, {0, 0}}));
    CHECK(partial.value[0] == 0.75);
    CHECK(partial.present[0]);
    CHECK(partial.value[1] == 0.0);
    CHECK_FALSE(partial.present[1]);
}

TEST_CASE("AUC hand cases") {
    const std::vector<std::vector<double>> sep = {
        {0.9, 0.1}, {0.8, 0.2}, {0.2, 0.8}, {0.1, 0.9}};
    const PerClass a = roc_auc_ovr(sep, {0, 0, 1, 1}, 2);
    CHECK(a.value[0] == 1.0);
    CHECK(a.value[1] == 1.0);
    CHECK(a.present[0]);

    const std::vector<std::vector<double>> flat(6, {0.5, 0.5});
    const PerClass tied = roc_auc_ovr(flat, {0, 1, 0, 1, 0, 1}, 2);
    CHECK(tied.value[0] == 0.5);
    CHECK(tied.value[1] == 0.5);

    const std::vector<std::vector<double>> p3 = {
        {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.5, 0.4, 0.1}};
    const PerClass absent = roc_auc_ovr(p3, {0, 1, 0}, 3);
    CHECK(absent.present[0]);
    CHECK(absent.present[1]);
    CHECK_FALSE(absent.present[2]);
    CHECK(absent.value[2] == 0.0);

    CHECK_THROWS_AS(roc_auc_ovr({{0.7, 0.2}}, {0}, 2), ContractError);
}

TEST_CASE("AUC matches all-pairs oracle on 200 samples") {
    Rng rng(53);
    const int n = 200;
    const int k = 4;
    std::vector<std::vector<double>> probs(n, std::vector<double>(k));
    std::vector<int> truth(n);
    for (int i = 0; i < n; ++i) {
        truth[i] = static_cast<int>(rng.uniform() * k);
        double z = 0.0;
        for (int c = 0; c < k; ++c) {
            // Coarse grid to force score ties so the tie rule is exercised.
            probs[i][c] = 0.05 + std::floor(rng.uniform() * 8.0);
            z += probs[i][c];
        }
        for (int c = 0; c < k; ++c) probs[i][c] /= z;
    }
    const PerClass got = roc_auc_ovr(probs, truth, k);
    for (int c = 0; c < k; ++c) {
        REQUIRE(got.present[c]);
        std::vector<double> score(n);
        std::vector<char> pos(n);
        for (int i = 0; i < n; ++i) {
            score[i] = probs[i][c];
            pos[i] = truth[i] == c ? 1 : 0;
        }
        CHECK(got.value[c] == doctest::Approx(brute_auc_pairs(score, pos)).epsilon(1e-9));
    }
}

TEST_CASE("roc points are monotone and end at full rates") {
    const std::vector<double> s = {0.9, 0.8, 0.4, 0.35};
    const std::vector<char> y = {1, 0, 0, 1};
    const std::vector<RocPoint> pts = roc_points(s, y);
    REQUIRE(pts.size() == 5);
    CHECK(std::isinf(pts[0].threshold));
    CHECK(pts[0].tpr == 0.0);
    CHECK(pts[0].fpr == 0.0);
    CHECK(pts[1].tpr == 0.5);
    CHECK(pts[1].fpr == 0.0);
    CHECK(pts[2].fpr == 0.5);
    CHECK(pts[4].tpr == 1.0);
    CHECK(pts[4].fpr == 1.0);

    Rng rng(61);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 5 + static_cast<int>(rng.uniform() * 40.0);
        std::vector<double> score(n);
        std::vector<char> pos(n);
        pos[0] = 1;
        pos[1] = 0;
        for (int i = 0; i < n; ++i) {
            score[i] = std::floor(rng.uniform() * 10.0) / 10.0;
            if (i >= 2) pos[i] = rng.uniform() < 0.5 ? 1 : 0;
        }
        const std::vector<RocPoint> curve = roc_points(score, pos);
        for (std::size_t i = 1; i < curve.size(); ++i) {
            CHECK(curve[i].tpr >= curve[i - 1].tpr);
            CHECK(curve[i].fpr >= curve[i - 1].fpr);
            CHECK(curve[i].threshold <= curve[i - 1].threshold);
        }
        CHECK(curve.back().tpr == 1.0);
        CHECK(curve.back().fpr == 1.0);
    }

    CHECK_THROWS_AS(roc_points({0.5, 0.4}, {1, 1}), ContractError);
}

TEST_CASE("evaluate_predictions aggregates the individual metrics") {
    const std::vector<int> truth = {0, 0, 1, 1, 2, 2, 2, 3};
    const std::vector<int> pred = {0, 1, 1, 1, 2, 0, 2, 3};
    std::vector<std::vector<double>> probs;
    Rng rng(71);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        std::vector<double> row(4);
        double z = 0.0;
        for (int c = 0; c < 4; ++c) {
            row[c] = 0.1 + rng.uniform();
            z += row[c];
        }
        for (int c = 0; c < 4; ++c) row[c] /= z;
        probs.push_back(row);
    }
    const EvalReport r = evaluate_predictions(truth, pred, probs, 4);
    const Confusion c = confusion_matrix(truth, pred, 4);
    CHECK(r.confusion.counts == c.counts);
    CHECK(r.accuracy == accuracy(c));
    CHECK(r.weighted_f1 == weighted_f1(c));
    CHECK(r.kappa_l == linear_kappa(c));
    CHECK(r.support == std::vector<std::int64_t>{2, 2, 3, 1});
    CHECK(r.recall.value[2] == doctest::Approx(2.0 / 3.0));
    CHECK(r.auc.present.size() == 4);
}

TEST_CASE("report files: counts, row percentages, ROC CSV, summary text") {
    const auto dir = std::filesystem::temp_directory_path() / "cpgait_metrics_test";
    std::filesystem::create_directories(dir);
    const Confusion c = from_rows({{8, 2, 0}, {3, 6, 1}, {0, 0, 0}});

    const std::string raw = (dir / "confusion.csv").string();
    save_confusion_csv(raw, c, false);
    const std::vector<std::string> raw_lines = read_lines(raw);
    REQUIRE(raw_lines.size() == 4);
    CHECK(raw_lines[0] == "truth,pred_1,pred_2,pred_3");
    CHECK(raw_lines[1] == "1,8,2,0");
    CHECK(raw_lines[2] == "2,3,6,1");
    CHECK(raw_lines[3] == "3,0,0,0");

    const std::string pct = (dir / "confusion_pct.csv").string();
    save_confusion_csv(pct, c, true);
    const std::vector<std::string> pct_lines = read_lines(pct);
    for (std::size_t i = 1; i <= 2; ++i) {
        std::stringstream ss(pct_lines[i]);
        std::string cell;
        std::getline(ss, cell, ',');
        double sum = 0.0;
        while (std::getline(ss, cell, ',')) sum += std::stod(cell);
        CHECK(std::abs(sum - 100.0) <= 0.1);
    }

    const std::string roc = (dir / "roc.csv").string();
    save_roc_csv(roc, roc_points({0.9, 0.2}, {1, 0}));
    const std::vector<std::string> roc_lines = read_lines(roc);
    CHECK(roc_lines[0] == "threshold,tpr,fpr");
    CHECK(roc_lines.size() == 4);

    EvalReport r = evaluate_predictions({0, 1, 1}, {0, 1, 0}, {}, 2);
    const std::string txt = (dir / "report.txt").string();
    save_report_txt(txt, "unit", r);
    const std::vector<std::string> txt_lines = read_lines(txt);
    bool saw_acc = false;
    bool saw_kappa = false;
    for (const auto& line : txt_lines) {
        if (line.rfind("accuracy:", 0) == 0) saw_acc = true;
        if (line.rfind("kappa_l:", 0) == 0) saw_kappa = true;
    }
    CHECK(saw_acc);
    CHECK(saw_kappa);
    std::filesystem::remove_all(dir);
}
