#include <doctest.h>

#include <cmath>

#include "pcseg/losses.hpp"
#include "test_util.hpp"

using namespace pcseg;
using testutil::max_fd_error;
using testutil::random_tensor;

TEST_CASE("balanced histogram gives unit weights") {
    ClassWeights w = compute_class_weights({100, 100, 100, 100}, 4, 0.0);
    for (double v : w.w) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("90/10 split matches the hand-computed weights") {
    ClassWeights w = compute_class_weights({90, 10}, 2, 0.0);
    CHECK(w.w[0] == doctest::Approx(0.2));
    CHECK(w.w[1] == doctest::Approx(1.8));
}

TEST_CASE("weights are inverse-proportional to smoothed counts") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 2 + rng.uniform_int(6);
        std::vector<std::size_t> hist(c);
        for (auto& h : hist) h = 1 + rng.uniform_int(1000);
        const double s = trial % 2 ? 1.0 : 0.0;
        ClassWeights w = compute_class_weights(hist, c, s);
        for (std::size_t a = 0; a < c; ++a) {
            for (std::size_t b = 0; b < c; ++b) {
                const double expected = (static_cast<double>(hist[b]) + s) /
                                        (static_cast<double>(hist[a]) + s);
                CHECK(w.w[a] / w.w[b] == doctest::Approx(expected).epsilon(1e-12));
            }
        }
        double mean = 0;
        for (double v : w.w) mean += v;
        CHECK(mean / c == doctest::Approx(1.0));
    }
}

TEST_CASE("count scaling leaves unsmoothed weights unchanged") {
    std::vector<std::size_t> hist{7, 13, 40};
    ClassWeights a = compute_class_weights(hist, 3, 0.0);
    for (auto& h : hist) h *= 17;
    ClassWeights b = compute_class_weights(hist, 3, 0.0);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a.w[k] == doctest::Approx(b.w[k]).epsilon(1e-12));
}

TEST_CASE("absent classes take the capped maximum weight") {
    ClassWeights w = compute_class_weights({90, 0, 10}, 3, 0.0);
    CHECK(w.w[1] == doctest::Approx(w.w[2]));
    CHECK(w.w[1] > w.w[0]);
}

TEST_CASE("histogram size mismatch is a validation error") {
    CHECK_THROWS_AS(compute_class_weights({1, 2}, 3, 0.0), DataError);
    CHECK_THROWS_AS(compute_class_weights({0, 0}, 2, 1.0), DataError);
}

TEST_CASE("perfect predictions drive wce to zero") {
    const std::size_t n = 5, c = 3;
    std::vector<double> logits(n * c, 0.0);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        labels[i] = static_cast<int>(i % c);
        logits[i * c + labels[i]] = 40.0;
    }
    ClassWeights w{std::vector<double>(c, 1.0)};
    Tensor loss = wce_loss(Tensor::from({n, c}, std::move(logits)), labels, w);
    CHECK(loss.value() >= 0.0);
    CHECK(loss.value() <= 1e-10);
}

TEST_CASE("uniform predictions cost ln C") {
    const std::size_t n = 7, c = 4;
    Tensor logits = Tensor::zeros({n, c});
    std::vector<int> labels(n, 2);
    ClassWeights w{std::vector<double>(c, 1.0)};
    CHECK(wce_loss(logits, labels, w).value() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("wce matches a per-point loop oracle and finite differences") {
    Rng rng(33);
    const std::size_t n = 6, c = 4;
    Tensor logits = random_tensor({n, c}, rng, true, -2, 2);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(c));
    ClassWeights w;
    for (std::size_t k = 0; k < c; ++k) w.w.push_back(0.25 + rng.uniform());

    Tensor loss = wce_loss(logits, labels, w);
    long double expected = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double denom = 0.0L;
        for (std::size_t k = 0; k < c; ++k) denom += expl((long double)logits.at(i, k));
        const long double p = expl((long double)logits.at(i, labels[i])) / denom;
        expected -= w.w[labels[i]] * logl(p);
    }
    expected /= n;
    CHECK(std::fabs(loss.value() - (double)expected) < 1e-10);
    CHECK(loss.value() >= 0.0);

    CHECK(max_fd_error({logits}, [&] { return wce_loss(logits, labels, w); }) < 1e-4);
}

TEST_CASE("label out of range rejected") {
    ClassWeights w{std::vector<double>(2, 1.0)};
    CHECK_THROWS_AS(wce_loss(Tensor::zeros({1, 2}), {5}, w), DataError);
}

TEST_CASE("cr loss at matching extremes is near zero") {
    const std::size_t n = 4, c = 3;
    Tensor labels = build_presence_labels({0, 1, 2, 1}, c, PresenceLabelMode::per_point);
    Tensor probs = Tensor::from(labels.shape(), labels.values());
    Tensor loss = cr_loss(probs, labels);
    CHECK(loss.value() >= 0.0);
    CHECK(loss.value() < 1e-10);
}

TEST_CASE("cr loss at one half is C ln 2") {
    const std::size_t n = 6, c = 5;
    Tensor probs = Tensor::full({n, c}, 0.5);
    Tensor labels = build_presence_labels(std::vector<int>(n, 1), c, PresenceLabelMode::per_point);
    CHECK(cr_loss(probs, labels).value() == doctest::Approx(c * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("cr loss matches a loop oracle and finite differences") {
    Rng rng(34);
    const std::size_t n = 5, c = 3;
    Tensor raw = random_tensor({n, c}, rng, true, -2, 2);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(c));
    Tensor lab = build_presence_labels(labels, c, PresenceLabelMode::scene_broadcast);

    auto loss_fn = [&] { return cr_loss(sigmoid(raw), lab); };
    Tensor loss = loss_fn();
    long double expected = 0.0L;
    for (std::size_t k = 0; k < c; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            const long double p = 1.0L / (1.0L + expl(-(long double)raw.at(i, k)));
            const long double l = lab.at(i, k);
            expected -= l * logl(p) + (1.0L - l) * logl(1.0L - p);
        }
    }
    expected /= n;
    CHECK(std::fabs(loss.value() - (double)expected) < 1e-10);
    CHECK(loss.value() >= 0.0);
    CHECK(max_fd_error({raw}, loss_fn) < 1e-4);
}

TEST_CASE("a tiny class still contributes a full per-class term") {
    // one point of class 2 among many of class 0: the class-2 column still
    // adds a full BCE term for every point
    const std::size_t n = 100, c = 3;
    std::vector<int> labels(n, 0);
    labels[0] = 2;
    Tensor lab = build_presence_labels(labels, c, PresenceLabelMode::scene_broadcast);
    Tensor probs = Tensor::full({n, c}, 0.5);
    // every (i,k) cell costs ln 2 regardless of class frequency
    CHECK(cr_loss(probs, lab).value() == doctest::Approx(c * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("total loss composition and report identity") {
    Tensor wce = Tensor::scalar(0.8);
    Tensor cr = Tensor::scalar(0.2);
    CHECK(total_loss(wce, cr, 1.0).value() == doctest::Approx(0.8));
    CHECK(total_loss(wce, cr, 0.0).value() == doctest::Approx(0.2));
    CHECK(total_loss(wce, cr, 0.5).value() == doctest::Approx(0.5));
    for (double lambda : {0.0, 0.5, 1.0}) {
        Tensor total = total_loss(wce, cr, lambda);
        LossReport report =
            make_loss_report(total, wce, cr, lambda, PresenceLabelMode::scene_broadcast);
        CHECK(std::fabs(report.total - (lambda * report.wce + (1 - lambda) * report.cr)) <= 1e-12);
    }
    CHECK_THROWS_AS(total_loss(wce, cr, 1.5), ConfigError);
    CHECK_THROWS_AS(total_loss(wce, cr, -0.1), ConfigError);
}

TEST_CASE("presence labels per mode") {
    Tensor one_hot = build_presence_labels({2}, 4, PresenceLabelMode::per_point);
    CHECK(one_hot.values() == std::vector<double>{0, 0, 1, 0});

    Tensor scene = build_presence_labels({0, 2, 0}, 4, PresenceLabelMode::scene_broadcast);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(scene.at(i, 0) == 1.0);
        CHECK(scene.at(i, 1) == 0.0);
        CHECK(scene.at(i, 2) == 1.0);
        CHECK(scene.at(i, 3) == 0.0);
    }

    Rng rng(35);
    std::vector<int> labels(20);
    for (auto& l : labels) l = static_cast<int>(rng.uniform_int(5));
    Tensor rows = build_presence_labels(labels, 5, PresenceLabelMode::per_point);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += rows.at(i, k);
        CHECK(s == 1.0);
    }
}
