// Acceptance checks: one PASS/FAIL/SKIP line per criterion, exit status 1 if
// any criterion fails. Criterion 10 needs the full cell-image dataset and runs
// only when MICROCNN_NIH_ROOT points at it.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "microcnn/microcnn.hpp"
#include "support/network_fd.hpp"

using namespace microcnn;
using namespace microcnn::testing;

namespace {

struct Outcome {
  enum Status { pass, fail, skip } status = fail;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) { return {ok ? Outcome::pass : Outcome::fail, std::move(detail)}; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

int failures = 0;

void run(int id, const char* title, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {Outcome::fail, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (o.status != Outcome::skip && secs > budget_seconds) {
    o.status = Outcome::fail;
    o.detail += "; over time budget of " + num(budget_seconds) + " s";
  }
  const char* tag = o.status == Outcome::pass ? "PASS" : o.status == Outcome::skip ? "SKIP" : "FAIL";
  if (o.status == Outcome::fail) ++failures;
  std::printf("[%s] %2d %-28s %7.2fs  %s\n", tag, id, title, secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------- 1, 2

Outcome parameter_count_check() {
  std::ostringstream out;
  cli::cmd_summary(out);
  Rng rng(0);
  const std::size_t n = parameter_count(build_malaria_net(rng));
  const bool printed = out.str().find("Total params: 3,357,090") != std::string::npos;
  return verdict(n == 3'357'090u && printed, "count=" + std::to_string(n) + (printed ? "" : ", summary text wrong"));
}

Outcome shape_chain_check() {
  Rng rng(1);
  Sequential net = build_malaria_net(rng);
  std::vector<Shape> seen;
  net.forward(Tensor(Shape{1, 64, 64, 3}, 0.5f), Mode::infer, [&](const Layer& layer, const Tensor& y) {
    const std::string& name = layer.name();
    if (name.starts_with("conv") || name.starts_with("pool") || name.starts_with("dense") || name == "flatten")
      seen.push_back(detail::drop_batch(y.shape()));
  });
  const std::vector<Shape> want{{62, 62, 32}, {31, 31, 32}, {29, 29, 32}, {14, 14, 32},
                                {6272},       {512},        {256},        {2}};
  std::string chain;
  for (const auto& s : seen) chain += (chain.empty() ? "" : " -> ") + s.to_string();
  return verdict(seen == want, chain);
}

// ---------------------------------------------------------------- 3

double layer_fd_error(Layer& layer, Tensor x, Rng& rng, const std::function<void()>& prep = [] {}) {
  prep();
  const Tensor y = layer.forward(x, Mode::train);
  const Tensor r = rng_uniform(rng, y.shape(), -1, 1);
  layer.zero_grad();
  const Tensor dx = layer.backward(r);
  auto loss = [&] {
    prep();
    return probe(layer.forward(x, Mode::train), r);
  };
  double worst = max_relative_error(dx, numeric_gradient(x, loss));
  for (auto& p : layer.params()) {
    if (!p.trainable()) continue;
    const Tensor analytic = *p.grad;
    worst = std::max(worst, max_relative_error(analytic, numeric_gradient(*p.value, loss)));
  }
  return worst;
}

Outcome gradient_suite_check() {
  Rng rng(300);
  double coarse = 0.0, fine = 0.0;  // limits 1e-2 and 1e-3

  Conv2D conv("conv", 2, 3, 3, 3, 1, Activation::none, rng);
  conv.bias() = rng_uniform(rng, Shape{3}, -0.5f, 0.5f);
  coarse = std::max(coarse, layer_fd_error(conv, rng_uniform(rng, Shape{1, 5, 5, 2}, -1, 1), rng));

  Tensor px(Shape{1, 6, 6, 2});
  std::vector<std::size_t> perm(px.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  shuffle(perm.begin(), perm.end(), rng);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = -3.6f + 0.1f * static_cast<float>(perm[i]);
  MaxPool2D pool("pool", 2);
  coarse = std::max(coarse, layer_fd_error(pool, px, rng));

  BatchNorm bn("bn", 2);
  bn.gamma() = rng_uniform(rng, Shape{2}, 0.5f, 1.5f);
  bn.beta() = rng_uniform(rng, Shape{2}, -0.5f, 0.5f);
  coarse = std::max(coarse, layer_fd_error(bn, rng_uniform(rng, Shape{2, 3, 3, 2}, -1, 1), rng));

  Dense dense("dense", 5, 3, Activation::none, rng);
  dense.bias() = rng_uniform(rng, Shape{3}, -0.5f, 0.5f);
  fine = std::max(fine, layer_fd_error(dense, rng_uniform(rng, Shape{2, 5}, -1, 1), rng));

  Tensor rx = rng_uniform(rng, Shape{3, 7}, -1, 1);
  for (auto& v : rx.data())
    if (std::abs(v) < 0.05f) v = v < 0 ? -0.5f : 0.5f;
  ActivationLayer relu_layer("relu", ActivationLayer::Kind::relu);
  fine = std::max(fine, layer_fd_error(relu_layer, rx, rng));

  Dropout drop("drop", 0.3f, Rng(0));
  fine = std::max(fine, layer_fd_error(drop, rng_uniform(rng, Shape{4, 10}, -1, 1), rng, [&] { drop.reseed(9); }));

  Tensor logits = rng_uniform(rng, Shape{4, 2}, -2, 2);
  const Tensor onehot(Shape{4, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  fine = std::max(fine, max_relative_error(softmax_xent_backward(softmax(logits), onehot),
                                           numeric_gradient(logits, [&] {
                                             return cross_entropy(softmax(logits), onehot).mean_loss;
                                           })));

  // End to end through a small copy of the reference architecture.
  Sequential net = tiny_net(rng, false);
  const Tensor x = rng_uniform(rng, Shape{4, 8, 8, 1}, -1, 1);
  const Tensor probs = net.forward(x, Mode::train);
  net.zero_grad();
  net.backward(softmax_xent_backward(probs, onehot), net.size() - 1);
  const NetworkGradReport e2e = check_network_gradients(
      net, x, [&] { return cross_entropy(net.forward(x, Mode::train), onehot).mean_loss; }, 3e-3f);
  return verdict(coarse < 1e-2 && fine < 1e-3 && e2e.worst < 1e-2,
                 "conv/pool/bn " + num(coarse) + ", dense/relu/dropout/loss " + num(fine) + ", network " + num(e2e.worst) + " (" +
                     std::to_string(e2e.skipped) + " kink coordinates skipped)");
}

// ---------------------------------------------------------------- 4

Outcome oracle_check() {
  Rng rng(400);
  double conv_err = 0.0;
  bool pool_exact = true;
  const int cases = 25;
  for (int c = 0; c < cases; ++c) {
    const std::size_t cin = 1 + rng.below(3), cout = 1 + rng.below(4), k = 1 + rng.below(3), stride = 1 + rng.below(2);
    const std::size_t h = k + rng.below(6), w = k + rng.below(6), n = 1 + rng.below(2);
    Conv2D conv("conv", cin, cout, k, k, stride, Activation::none, rng);
    conv.bias() = rng_uniform(rng, Shape{cout}, -1, 1);
    const Tensor x = rng_uniform(rng, Shape{n, h, w, cin}, -1, 1);
    conv_err = std::max(conv_err, max_abs_diff(conv.infer(x), naive_conv2d(x, conv.weights(), conv.bias(), stride)));

    const std::size_t size = 2 + rng.below(2);
    const Tensor px = rng_uniform(rng, Shape{n, size + rng.below(7), size + rng.below(7), cin}, -1, 1);
    MaxPool2D pool("pool", size);
    pool_exact = pool_exact && max_abs_diff(pool.infer(px), naive_maxpool(px, size)) == 0.0;
  }
  return verdict(conv_err <= 1e-4 && pool_exact, std::to_string(cases) + " cases, conv max diff " + num(conv_err) +
                                                     ", pool " + (pool_exact ? "exact" : "MISMATCH"));
}

// ---------------------------------------------------------------- 5, 6, 7

Outcome adam_check() {
  const std::vector<float> want = scalar_adam(0.0f, std::vector<double>(100, 1.0));
  Tensor p(Shape{1});
  AdamState s(p.shape(), {});
  double worst = 0.0;
  for (std::size_t t = 0; t < 100; ++t) {
    adam_step(p, Tensor(Shape{1}, {1.0f}), s);
    worst = std::max(worst, std::abs(double(p[0]) - double(want[t])));
  }
  Rng rng(500);
  const Tensor g = rng_uniform(rng, Shape{64}, -5, 5);
  Tensor q(Shape{64});
  AdamState sq(q.shape(), {});
  adam_step(q, g, sq);
  double first = 0.0;
  for (float v : q.data()) first = std::max(first, std::abs(std::abs(double(v)) - 0.001));
  return verdict(worst <= 1e-7 && first <= 1e-4 * 0.001,
                 "100-step diff " + num(worst) + ", first-step |d|-alpha " + num(first));
}

Outcome loss_check() {
  const Tensor y(Shape{1, 2}, {1, 0});
  const double l1 = cross_entropy(Tensor(Shape{1, 2}, {1.0f, 0.0f}), y).mean_loss;
  const double l2 = cross_entropy(Tensor(Shape{1, 2}, {0.5f, 0.5f}), y).mean_loss;
  const double l3 = cross_entropy(Tensor(Shape{1, 2}, {0.012f, 0.988f}), y).mean_loss;
  const double e = std::max({std::abs(l1), std::abs(l2 - std::log(2.0)), std::abs(l3 + std::log(0.012))});
  return verdict(e <= 1e-6, "losses " + num(l1) + ", " + num(l2) + ", " + num(l3) + "; max err " + num(e));
}

Outcome checkpoint_check() {
  Rng rng(700);
  Sequential net = build_malaria_net(rng);
  net.set_class_names({"Parasitized", "Uninfected"});
  net.train_step(rng_uniform(rng, Shape{4, 64, 64, 3}, 0, 1), Tensor(Shape{4, 2}, {1, 0, 0, 1, 0, 1, 1, 0}));
  TempDir dir("accept_ckpt");
  save(net, dir.path() / "m.mcn1");
  const Sequential back = load(dir.path() / "m.mcn1");
  const Tensor x = rng_uniform(rng, Shape{8, 64, 64, 3}, 0, 1);
  const double d = max_abs_diff(net.infer(x), back.infer(x));
  return verdict(d == 0.0, "max abs diff " + num(d));
}

// ---------------------------------------------------------------- 8

Outcome separable_check(const std::filesystem::path& data) {
  LoadedDataset loaded = load_directory(data);
  const DatasetSplit parts = split(std::move(loaded.images), {0.8, 0.1, 0.1}, 42);
  Rng rng(42);
  Sequential net = build_malaria_net(rng);
  TrainConfig cfg;
  cfg.epochs = 5;
  // Batch-norm running statistics (momentum 0.99) need on the order of a
  // hundred updates before infer-mode validation is meaningful; at batch 64
  // five epochs over 160 images give only 15.
  cfg.batch_size = 6;
  cfg.target_val_accuracy = 1.0;
  const TrainResult r = train(net, parts, cfg);
  const double val = r.history.back().val_accuracy;
  return verdict(r.stopped_early && val == 1.0, "val_acc=" + num(val) + " after " + std::to_string(r.history.size()) +
                                                    " epoch(s) at batch 6, early stop " +
                                                    (r.stopped_early ? "yes" : "no"));
}

Outcome capacity_check() {
  Rng rng(800);
  std::vector<LabeledImage> images;
  for (int i = 0; i < 32; ++i)
    images.push_back({uniform_noise_image(rng, 64, 64, 0, 255), static_cast<int>(rng.below(2)), std::to_string(i)});
  Sequential net = build_malaria_net(rng);
  Rng order(801);
  const Batch all = batches(images, 32, false, order)[0];
  int step = 0;
  double acc = 0.0;
  while (step < 300) {
    net.train_step(all.x, all.y);
    ++step;
    if (step % 5 == 0) {
      acc = accuracy(net.infer(all.x), all.labels);
      if (acc == 1.0) break;
    }
  }
  return verdict(acc == 1.0, "train accuracy " + num(acc) + " after " + std::to_string(step) + " steps");
}

// ---------------------------------------------------------------- 9

Outcome determinism_check(const std::filesystem::path& data, const std::filesystem::path& scratch) {
  std::ostringstream sink;
  std::string logs[2];
  for (int i = 0; i < 2; ++i) {
    RunConfig cfg;
    cfg.data_root = data;
    cfg.output_dir = scratch / ("run" + std::to_string(i));
    cfg.train.epochs = 2;
    cfg.train.batch_size = 32;
    cfg.train.target_val_accuracy = 1.0;
    if (cli::cmd_train(cfg, sink, sink) != cli::kOk) return {Outcome::fail, "train failed: " + sink.str()};
    logs[i] = slurp(cfg.output_dir / "cost_log.csv");
  }
  const bool same = !logs[0].empty() && logs[0] == logs[1];
  return verdict(same, std::to_string(std::count(logs[0].begin(), logs[0].end(), '\n') - 1) + " rows, " +
                           (same ? "byte-identical" : "DIFFERENT"));
}

// ---------------------------------------------------------------- 10

Outcome full_dataset_check() {
  const char* root = std::getenv("MICROCNN_NIH_ROOT");
  if (root == nullptr || *root == '\0') return {Outcome::skip, "set MICROCNN_NIH_ROOT to the cell_images directory"};
  TempDir dir("accept_nih");
  RunConfig cfg;
  cfg.data_root = root;
  cfg.output_dir = dir.path();
  std::ostringstream out, err;
  if (cli::cmd_train(cfg, out, err) != cli::kOk) return {Outcome::fail, err.str()};
  const std::string text = out.str();
  const bool early = text.find("early stop") != std::string::npos;
  const auto at = text.find("test loss=");
  double test_acc = 0.0;
  if (at != std::string::npos) {
    const auto acc_at = text.find("accuracy=", at);
    test_acc = std::stod(text.substr(acc_at + 9));
  }
  return verdict(early && test_acc >= 0.934,
                 "test accuracy " + num(test_acc) + ", early stop " + (early ? "yes" : "no"));
}

}  // namespace

int main() {
  TempDir scratch("acceptance");
  const auto data = scratch.path() / "separable";
  write_separable_dataset(data, 100, 8);

  run(1, "parameter count", 1, parameter_count_check);
  run(2, "shape chain", 1, shape_chain_check);
  run(3, "gradient suite", 30, gradient_suite_check);
  run(4, "oracle equivalence", 10, oracle_check);
  run(5, "adam equivalence", 1, adam_check);
  run(6, "loss values", 1, loss_check);
  run(7, "checkpoint round trip", 5, checkpoint_check);
  const auto t8 = std::chrono::steady_clock::now();
  run(8, "separable data", 120, [&] { return separable_check(data); });
  const double left = 120.0 - std::chrono::duration<double>(std::chrono::steady_clock::now() - t8).count();
  run(8, "capacity (noise labels)", left, capacity_check);
  run(9, "determinism", 120, [&] { return determinism_check(data, scratch.path()); });
  run(10, "full dataset headline", 4 * 3600, full_dataset_check);

  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED" : "SOME CRITERIA FAILED");
  return failures == 0 ? 0 : 1;
}
