#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "mpseg/predictor.hpp"
#include "mpseg/rng.hpp"

using namespace mpseg;

namespace {

Slice labelled_slice(int q, int channels, std::int32_t num_classes, Rng& rng,
                     double loss_weight = 1.0) {
    Slice s;
    s.grid_size = q;
    s.channels = channels;
    s.num_classes = num_classes;
    s.loss_weight = loss_weight;
    s.image.resize(static_cast<std::size_t>(q) * q * channels);
    s.labels.emplace(static_cast<std::size_t>(q) * q);
    for (double& v : s.image) v = rng.uniform(-1.0, 1.0);
    for (auto& l : *s.labels)
        l = static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(num_classes)));
    return s;
}

double total_loss(const PatchSoftmaxModel& model, const std::vector<Slice>& slices) {
    std::vector<double> gw(model.weights.size());
    std::vector<double> gb(model.bias.size());
    double loss = 0.0;
    for (const Slice& s : slices) loss += weighted_ce_loss_and_grad(model, s, gw, gb);
    return loss;
}

}  // namespace

TEST_CASE("features of a constant image are (v, v, 0)") {
    int q = 10;
    std::vector<double> image(static_cast<std::size_t>(q) * q, 4.25);
    std::vector<double> f = featurize(image, q, 1);
    for (std::size_t p = 0; p < static_cast<std::size_t>(q) * q; ++p) {
        CHECK(f[p * 3 + 0] == doctest::Approx(4.25));
        CHECK(f[p * 3 + 1] == doctest::Approx(4.25));
        CHECK(f[p * 3 + 2] == doctest::Approx(0.0));
    }
}

TEST_CASE("unit ramp has gradient magnitude one in the interior") {
    int q = 12;
    std::vector<double> image(static_cast<std::size_t>(q) * q);
    for (int a = 0; a < q; ++a)
        for (int b = 0; b < q; ++b) image[static_cast<std::size_t>(a) * q + b] = a;
    std::vector<double> f = featurize(image, q, 1);
    for (int a = 1; a < q - 1; ++a)
        for (int b = 1; b < q - 1; ++b)
            CHECK(f[(static_cast<std::size_t>(a) * q + b) * 3 + 2] == doctest::Approx(1.0));
}

TEST_CASE("box mean matches the direct nine-point average") {
    Rng rng(3);
    int q = 9;
    std::vector<double> image(static_cast<std::size_t>(q) * q);
    for (double& v : image) v = rng.uniform(0.0, 1.0);
    std::vector<double> f = featurize(image, q, 1);
    for (int a = 1; a < q - 1; ++a)
        for (int b = 1; b < q - 1; ++b) {
            double sum = 0.0;
            for (int da = -1; da <= 1; ++da)
                for (int db = -1; db <= 1; ++db)
                    sum += image[static_cast<std::size_t>(a + da) * q + (b + db)];
            CHECK(f[(static_cast<std::size_t>(a) * q + b) * 3 + 1] ==
                  doctest::Approx(sum / 9.0));
        }
}

TEST_CASE("oracle predictions are one-hot and invertible") {
    std::vector<std::int32_t> labels = {0, 2, 1, 3, 2, 0, 1, 1, 3, 0, 2, 1, 0, 0, 1, 2};
    // pad to an 8x8 grid
    labels.resize(64, 2);
    std::vector<double> probs = oracle_predict(labels, 8, 4);
    for (std::size_t p = 0; p < 64; ++p) {
        double sum = 0.0;
        std::int32_t argmax = 0;
        for (std::int32_t l = 0; l < 4; ++l) {
            sum += probs[p * 4 + l];
            if (probs[p * 4 + l] > probs[p * 4 + argmax]) argmax = l;
        }
        CHECK(sum == doctest::Approx(1.0));
        CHECK(argmax == labels[p]);
    }
    CHECK(probs[1 * 4 + 2] == 1.0);  // label 2 of L=4 -> (0,0,1,0)
    CHECK(probs[1 * 4 + 0] == 0.0);

    std::vector<std::int32_t> bad = labels;
    bad[0] = 4;
    CHECK_THROWS_AS(oracle_predict(bad, 8, 4), DataError);
}

TEST_CASE("noisy oracle with zero rates equals the oracle") {
    Rng rng(8);
    Slice s = labelled_slice(16, 1, 3, rng);
    NoisyOracleConfig config{0.0, 0.0, 123};
    CHECK(noisy_oracle_predict(*s.labels, 16, 3, config, 0) ==
          oracle_predict(*s.labels, 16, 3));
}

TEST_CASE("noisy oracle flips close to the configured rate") {
    int q = 100;  // 10,000 pixels
    std::vector<std::int32_t> labels(static_cast<std::size_t>(q) * q, 1);
    NoisyOracleConfig config{0.2, 0.0, 31337};
    std::vector<double> probs = noisy_oracle_predict(labels, q, 3, config, 0);
    int flipped = 0;
    for (std::size_t p = 0; p < labels.size(); ++p)
        if (probs[p * 3 + 1] != 1.0) ++flipped;
    double fraction = static_cast<double>(flipped) / static_cast<double>(labels.size());
    CHECK(fraction >= 0.185);
    CHECK(fraction <= 0.215);
}

TEST_CASE("noisy oracle is pure in (seed, view, slice)") {
    Rng rng(9);
    Slice s = labelled_slice(12, 1, 4, rng);
    NoisyOracleConfig config{0.3, 0.0, 55};
    auto a = noisy_oracle_predict(*s.labels, 12, 4, config, 2, 5);
    auto b = noisy_oracle_predict(*s.labels, 12, 4, config, 2, 5);
    CHECK(a == b);
    auto c = noisy_oracle_predict(*s.labels, 12, 4, config, 3, 5);
    CHECK(a != c);
}

TEST_CASE("error indicators are uncorrelated across views") {
    int q = 100;
    std::vector<std::int32_t> labels(static_cast<std::size_t>(q) * q, 1);
    NoisyOracleConfig config{0.2, 0.0, 777};
    auto probs_a = noisy_oracle_predict(labels, q, 3, config, 0);
    auto probs_b = noisy_oracle_predict(labels, q, 3, config, 1);

    double mean_a = 0, mean_b = 0;
    std::vector<double> err_a(labels.size()), err_b(labels.size());
    for (std::size_t p = 0; p < labels.size(); ++p) {
        err_a[p] = probs_a[p * 3 + 1] != 1.0 ? 1.0 : 0.0;
        err_b[p] = probs_b[p * 3 + 1] != 1.0 ? 1.0 : 0.0;
        mean_a += err_a[p];
        mean_b += err_b[p];
    }
    mean_a /= static_cast<double>(labels.size());
    mean_b /= static_cast<double>(labels.size());
    double cov = 0, var_a = 0, var_b = 0;
    for (std::size_t p = 0; p < labels.size(); ++p) {
        cov += (err_a[p] - mean_a) * (err_b[p] - mean_b);
        var_a += (err_a[p] - mean_a) * (err_a[p] - mean_a);
        var_b += (err_b[p] - mean_b) * (err_b[p] - mean_b);
    }
    double correlation = cov / std::sqrt(var_a * var_b);
    CHECK(std::abs(correlation) <= 0.05);
}

TEST_CASE("blurred noisy oracle stays normalized") {
    Rng rng(10);
    Slice s = labelled_slice(16, 1, 3, rng);
    NoisyOracleConfig config{0.1, 1.5, 99};
    auto probs = noisy_oracle_predict(*s.labels, 16, 3, config, 0);
    for (std::size_t p = 0; p < s.labels->size(); ++p) {
        double sum = probs[p * 3] + probs[p * 3 + 1] + probs[p * 3 + 2];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        for (int l = 0; l < 3; ++l) CHECK(probs[p * 3 + l] >= 0.0);
    }
}

TEST_CASE("softmax rows are normalized; zero weights give the uniform law") {
    PatchSoftmaxModel model(3, 3);
    Rng rng(11);
    std::vector<double> image(64);
    for (double& v : image) v = rng.uniform(-2.0, 2.0);
    std::vector<double> probs = predict(model, image, 8, 1);
    for (std::size_t p = 0; p < 64; ++p) {
        double sum = 0;
        for (int l = 0; l < 3; ++l) {
            CHECK(probs[p * 3 + l] == doctest::Approx(1.0 / 3.0));
            sum += probs[p * 3 + l];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
    // raising one bias raises that class's probability everywhere
    model.bias[2] = 1.0;
    std::vector<double> shifted = predict(model, image, 8, 1);
    for (std::size_t p = 0; p < 64; ++p) CHECK(shifted[p * 3 + 2] > probs[p * 3 + 2]);
}

TEST_CASE("analytic gradient matches central finite differences") {
    Rng rng(12);
    for (int instance = 0; instance < 3; ++instance) {
        Slice s = labelled_slice(8, 1, 3, rng, instance == 0 ? 1.0 : 1.0 / 3.0);
        PatchSoftmaxModel model(3, 3);
        for (double& w : model.weights) w = rng.uniform(-0.5, 0.5);
        for (double& b : model.bias) b = rng.uniform(-0.5, 0.5);

        std::vector<double> gw(model.weights.size());
        std::vector<double> gb(model.bias.size());
        weighted_ce_loss_and_grad(model, s, gw, gb);

        const double h = 1e-5;
        double max_rel = 0.0;
        auto check_param = [&](double& param, double analytic) {
            double saved = param;
            param = saved + h;
            double up = total_loss(model, {s});
            param = saved - h;
            double down = total_loss(model, {s});
            param = saved;
            double numeric = (up - down) / (2 * h);
            double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        };
        for (std::size_t i = 0; i < model.weights.size(); ++i)
            check_param(model.weights[i], gw[i]);
        for (std::size_t i = 0; i < model.bias.size(); ++i) check_param(model.bias[i], gb[i]);
        CHECK(max_rel <= 1e-4);
    }
}

TEST_CASE("slice gradients scale linearly with the loss weight") {
    Rng rng(13);
    Slice s = labelled_slice(8, 1, 3, rng, 1.0);
    Slice weighted = s;
    weighted.loss_weight = 1.0 / 3.0;
    PatchSoftmaxModel model(3, 3);
    for (double& w : model.weights) w = rng.uniform(-0.5, 0.5);

    std::vector<double> g1(model.weights.size()), b1(model.bias.size());
    std::vector<double> g3(model.weights.size()), b3(model.bias.size());
    double l1 = weighted_ce_loss_and_grad(model, s, g1, b1);
    double l3 = weighted_ce_loss_and_grad(model, weighted, g3, b3);
    CHECK(l3 == doctest::Approx(l1 / 3.0));
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g3[i] == doctest::Approx(g1[i] / 3.0));
}

TEST_CASE("zero-weight slices contribute zero gradient") {
    Rng rng(14);
    Slice s = labelled_slice(8, 1, 3, rng, 0.0);
    PatchSoftmaxModel model(3, 3);
    for (double& w : model.weights) w = rng.uniform(-0.5, 0.5);
    std::vector<double> gw(model.weights.size()), gb(model.bias.size());
    double loss = weighted_ce_loss_and_grad(model, s, gw, gb);
    CHECK(loss == 0.0);
    for (double g : gw) CHECK(g == 0.0);
    for (double g : gb) CHECK(g == 0.0);
}

TEST_CASE("training separates a linearly separable phantom") {
    // intensity alone separates the two classes
    Rng rng(15);
    std::vector<Slice> slices;
    for (int i = 0; i < 6; ++i) {
        Slice s;
        s.grid_size = 16;
        s.channels = 1;
        s.num_classes = 2;
        s.image.resize(256);
        s.labels.emplace(256);
        for (std::size_t p = 0; p < 256; ++p) {
            bool fg = rng.uniform() < 0.5;
            (*s.labels)[p] = fg ? 1 : 0;
            s.image[p] = (fg ? 2.0 : -2.0) + rng.uniform(-0.3, 0.3);
        }
        slices.push_back(std::move(s));
    }

    PatchSoftmaxModel model(2, 3);
    Rng train_rng(99);
    std::vector<double> curve = train(model, slices, 20, 0.5, train_rng);
    REQUIRE(curve.size() == 20);

    // curve halves: later mean must not exceed the earlier mean
    double first = 0, second = 0;
    for (std::size_t e = 0; e < 10; ++e) first += curve[e];
    for (std::size_t e = 10; e < 20; ++e) second += curve[e];
    CHECK(second <= first + 1e-12);

    int correct = 0, total = 0;
    for (const Slice& s : slices) {
        std::vector<double> probs = predict(model, s.image, s.grid_size, s.channels);
        for (std::size_t p = 0; p < 256; ++p) {
            std::int32_t argmax = probs[p * 2] >= probs[p * 2 + 1] ? 0 : 1;
            if (argmax == (*s.labels)[p]) ++correct;
            ++total;
        }
    }
    CHECK(static_cast<double>(correct) / total >= 0.95);
}

TEST_CASE("non-finite parameters surface as a divergence error") {
    Rng rng(16);
    std::vector<Slice> slices = {labelled_slice(8, 1, 3, rng)};
    PatchSoftmaxModel model(3, 3);
    model.weights[0] = std::numeric_limits<double>::quiet_NaN();
    Rng train_rng(1);
    CHECK_THROWS_AS(train(model, slices, 1, 0.1, train_rng), DivergenceError);
}

TEST_CASE("model JSON round trip") {
    PatchSoftmaxModel model(3, 6);
    Rng rng(17);
    for (double& w : model.weights) w = rng.uniform(-1.0, 1.0);
    for (double& b : model.bias) b = rng.uniform(-1.0, 1.0);
    auto path = std::filesystem::temp_directory_path() / "mpseg_model.json";
    model.save(path);
    PatchSoftmaxModel back = PatchSoftmaxModel::load(path);
    CHECK(back.num_classes == model.num_classes);
    CHECK(back.feature_count == model.feature_count);
    CHECK(back.weights == model.weights);
    CHECK(back.bias == model.bias);
}

TEST_CASE("all predictor implementations emit normalized rows") {
    Rng rng(18);
    Slice s = labelled_slice(12, 1, 3, rng);
    PatchSoftmaxModel model(3, 3);
    for (double& w : model.weights) w = rng.uniform(-1.0, 1.0);

    OraclePredictor oracle;
    NoisyOraclePredictor noisy(NoisyOracleConfig{0.25, 0.8, 5});
    ModelPredictor trained(model);
    for (SlicePredictor* predictor :
         std::initializer_list<SlicePredictor*>{&oracle, &noisy, &trained}) {
        std::vector<double> probs = predictor->predict_slice(s, 3, 0, 0);
        for (std::size_t p = 0; p < s.labels->size(); ++p) {
            double sum = 0;
            for (int l = 0; l < 3; ++l) {
                CHECK(probs[p * 3 + l] >= 0.0);
                sum += probs[p * 3 + l];
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}
