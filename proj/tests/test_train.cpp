#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "micronet/data.hpp"
#include "micronet/graph.hpp"
#include "micronet/train.hpp"

using namespace micronet;
namespace fs = std::filesystem;

namespace {

ArchitectureSpec tiny_spec() {
  ArchitectureSpec spec = ArchitectureSpec::preset(Variant::Custom);
  spec.base_e = 4;
  spec.num_pools = 1;
  spec.encoder_rates = {{1, 2}, {1}};
  return spec;
}

}  // namespace

TEST_CASE("cross-entropy value and logit gradient on a worked example") {
  // One pixel, two classes, probs (0.25, 0.75), true class 1:
  // loss = -log 0.75, grad = (a - y) / (N*H*W) = (0.25, -0.25).
  Tensor<double> probs(1, 2, 1, 1);
  probs[0] = 0.25;
  probs[1] = 0.75;
  Tensor<double> onehot(1, 2, 1, 1);
  onehot[1] = 1.0;
  auto res = cross_entropy_loss(probs, onehot);
  CHECK(res.loss == doctest::Approx(-std::log(0.75)).epsilon(1e-12));
  CHECK(res.grad_logits[0] == doctest::Approx(0.25));
  CHECK(res.grad_logits[1] == doctest::Approx(-0.25));

  auto from_labels = cross_entropy_from_labels(probs, std::vector<uint8_t>{1});
  CHECK(from_labels.loss == doctest::Approx(res.loss).epsilon(1e-12));
  CHECK(from_labels.grad_logits[0] == doctest::Approx(res.grad_logits[0]));

  // Mean reduction over batch and pixels.
  Tensor<double> p2(2, 2, 1, 1);
  p2[0] = 0.25; p2[1] = 0.75; p2[2] = 0.9; p2[3] = 0.1;
  auto r2 = cross_entropy_from_labels(p2, std::vector<uint8_t>{1, 0});
  CHECK(r2.loss == doctest::Approx((-std::log(0.75) - std::log(0.9)) / 2).epsilon(1e-12));
  CHECK(r2.grad_logits[0] == doctest::Approx(0.125));

  // One-hot violations are rejected with context.
  Tensor<double> bad(1, 2, 1, 1);
  bad[0] = 0.5;
  bad[1] = 0.5;
  CHECK_THROWS_AS(cross_entropy_loss(probs, bad), ValidationError);
  CHECK_THROWS_AS(cross_entropy_from_labels(probs, std::vector<uint8_t>{2}), ValidationError);
}

TEST_CASE("log clamp keeps the loss finite at zero probability") {
  Tensor<double> probs(1, 2, 1, 1);
  probs[0] = 0.0;
  probs[1] = 1.0;
  auto res = cross_entropy_from_labels(probs, std::vector<uint8_t>{0});
  CHECK(std::isfinite(res.loss));
  CHECK(res.loss == doctest::Approx(-std::log(1e-12)));
}

TEST_CASE("sgd momentum and coupled weight decay, worked numbers") {
  TrainingConfig cfg;

  // Defaults are the published protocol.
  CHECK(cfg.learning_rate == 0.001);
  CHECK(cfg.momentum == 0.9);
  CHECK(cfg.weight_decay == 0.00005);
  CHECK(cfg.batch_size == 2);

  // Zero gradient: only decay acts. g' = 5e-5, v = -5e-8, w = 0.99999995.
  {
    std::vector<Tensor<double>> w{Tensor<double>::full(1, 1, 1, 1, 1.0)};
    std::vector<Tensor<double>> g{Tensor<double>(1, 1, 1, 1)};
    OptimizerState<double> st;
    st.velocity.push_back(Tensor<double>(1, 1, 1, 1));
    sgd_step(w, g, st, cfg);
    CHECK(st.velocity[0][0] == doctest::Approx(-5e-8).epsilon(1e-12));
    CHECK(w[0][0] == doctest::Approx(0.99999995).epsilon(1e-12));
  }

  // Momentum accumulation: lr=0.1, m=0.9, wd=0, constant gradient 1.
  // Step 1: v=-0.1, w=0.9. Step 2: v=-0.19, w=0.71.
  {
    TrainingConfig c2;
    c2.learning_rate = 0.1;
    c2.momentum = 0.9;
    c2.weight_decay = 0.0;
    std::vector<Tensor<double>> w{Tensor<double>::full(1, 1, 1, 1, 1.0)};
    std::vector<Tensor<double>> g{Tensor<double>::full(1, 1, 1, 1, 1.0)};
    OptimizerState<double> st;
    st.velocity.push_back(Tensor<double>(1, 1, 1, 1));
    sgd_step(w, g, st, c2);
    CHECK(w[0][0] == doctest::Approx(0.9).epsilon(1e-12));
    sgd_step(w, g, st, c2);
    CHECK(st.velocity[0][0] == doctest::Approx(-0.19).epsilon(1e-12));
    CHECK(w[0][0] == doctest::Approx(0.71).epsilon(1e-12));
  }
}

TEST_CASE("he initialization statistics") {
  Rng rng(17);
  const int fan_in = 576;
  Tensor<double> t(1, 1, 400, 400);
  he_init(t, fan_in, rng);
  double mean = 0;
  for (int64_t i = 0; i < t.size(); ++i) mean += t[i];
  mean /= t.size();
  double var = 0;
  for (int64_t i = 0; i < t.size(); ++i) var += (t[i] - mean) * (t[i] - mean);
  var /= t.size();
  const double want = 2.0 / fan_in;
  CHECK(std::abs(mean) < 3 * std::sqrt(want / t.size()) * 2);
  CHECK(var == doctest::Approx(want).epsilon(0.05));
  CHECK_THROWS_AS(he_init(t, 0, rng), ParamError);
}

TEST_CASE("checkpoint bitwise roundtrip and integrity failures") {
  auto g = build_architecture<float>(tiny_spec());
  Rng rng(split_seed(3, static_cast<uint64_t>(SeedStream::Init)));
  init_params(g, rng);
  auto opt = OptimizerState<float>::init(g);
  for (auto& v : opt.velocity)
    for (int64_t i = 0; i < v.size(); ++i) v[i] = 0.5f;

  const auto path = (fs::temp_directory_path() / "mn_ck_roundtrip.mnck").string();
  save_training_state(g, opt, "note=hello\n", path);

  auto g2 = build_architecture<float>(tiny_spec());
  auto opt2 = OptimizerState<float>::init(g2);
  load_training_state(g2, &opt2, path);
  for (size_t p = 0; p < g.params.size(); ++p) {
    for (int64_t i = 0; i < g.params[p].size(); ++i) {
      CHECK(g2.params[p][i] == g.params[p][i]);
      CHECK(opt2.velocity[p][i] == 0.5f);
    }
  }
  CHECK(checkpoint_load<float>(path).meta == "note=hello\n");

  // Re-saving the loaded state reproduces the file byte for byte.
  const auto path2 = (fs::temp_directory_path() / "mn_ck_roundtrip2.mnck").string();
  save_training_state(g2, opt2, "note=hello\n", path2);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(b1 == b2);

  // Truncation is reported, and the target graph stays untouched.
  fs::resize_file(path, fs::file_size(path) / 2);
  auto g3 = build_architecture<float>(tiny_spec());
  Rng rng3(99);
  init_params(g3, rng3);
  const float before = g3.params[0][0];
  CHECK_THROWS_AS(load_training_state(g3, static_cast<OptimizerState<float>*>(nullptr), path),
                  IntegrityError);
  CHECK(g3.params[0][0] == before);

  // Architecture mismatch is an integrity error, not silent corruption.
  auto bigger = build_architecture<float>(ArchitectureSpec::from_name("bm2"));
  CHECK_THROWS_AS(
      load_training_state(bigger, static_cast<OptimizerState<float>*>(nullptr), path2),
      IntegrityError);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("training loop learns a separable toy problem deterministically") {
  auto patches = gen_synthetic(12, 16, 5);
  std::vector<Sample<float>> train_set, val_set;
  for (size_t i = 0; i < patches.size(); ++i) {
    auto& dst = i < 10 ? train_set : val_set;
    dst.push_back({patches[i].image, patches[i].label});
  }

  TrainingConfig cfg;
  cfg.epochs = 3;
  cfg.seed = 7;

  auto g1 = build_architecture<float>(tiny_spec());
  auto logs1 = train(g1, train_set, val_set, cfg);
  auto g2 = build_architecture<float>(tiny_spec());
  auto logs2 = train(g2, train_set, val_set, cfg);

  REQUIRE(logs1.size() == 3);
  CHECK(training_log_csv(logs1, false) == training_log_csv(logs2, false));
  for (size_t p = 0; p < g1.params.size(); ++p)
    for (int64_t i = 0; i < g1.params[p].size(); ++i) CHECK(g1.params[p][i] == g2.params[p][i]);

  // Log rendering: header plus one line per epoch; seconds column is the only
  // field dropped in comparison mode.
  auto csv = training_log_csv(logs1);
  CHECK(csv.rfind("epoch,loss,miou,acc,seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);

  std::vector<Sample<float>> empty;
  CHECK_THROWS_AS(train(g1, empty, val_set, cfg), ValidationError);
}

TEST_CASE("argmax and flips") {
  Tensor<float> probs(1, 2, 1, 2);
  probs.at(0, 0, 0, 0) = 0.8f;
  probs.at(0, 1, 0, 0) = 0.2f;
  probs.at(0, 0, 0, 1) = 0.3f;
  probs.at(0, 1, 0, 1) = 0.7f;
  auto labels = argmax_channels(probs);
  CHECK(labels[0] == 0);
  CHECK(labels[1] == 1);

  Tensor<float> img(1, 1, 1, 3);
  img[0] = 1; img[1] = 2; img[2] = 3;
  hflip_image_inplace(img);
  CHECK(img[0] == 3);
  hflip_image_inplace(img);
  CHECK(img[0] == 1);
  std::vector<uint8_t> lab{0, 1, 1, 0};
  auto twice = lab;
  hflip_label_inplace(twice, 2, 2);
  hflip_label_inplace(twice, 2, 2);
  CHECK(twice == lab);
}
