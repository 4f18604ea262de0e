#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

#include "microcnn/checkpoint.hpp"
#include "microcnn/config.hpp"
#include "microcnn/data.hpp"
#include "microcnn/image.hpp"
#include "microcnn/model.hpp"
#include "microcnn/training.hpp"

namespace microcnn::cli {

/// Process exit codes; each error class maps to exactly one code.
enum ExitCode : int {
  kOk = 0,
  kConfigError = 1,
  kDataError = 2,
  kNumericalError = 3,
  kCheckpointError = 4,
};

/// Six significant digits, as used in every CSV and report line.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string metrics_line(const EvalResult& r) { return "loss=" + fmt(r.loss) + " accuracy=" + fmt(r.accuracy); }

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,train_loss,train_acc,val_loss,val_acc,seconds\r\n";
  for (const auto& m : history)
    out << m.epoch << ',' << fmt(m.train_loss) << ',' << fmt(m.train_accuracy) << ',' << fmt(m.val_loss) << ','
        << fmt(m.val_accuracy) << ',' << fmt(m.wall_time_seconds) << "\r\n";
}

inline void write_cost_log_csv(const std::filesystem::path& path, const CostLog& log) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "batch,epoch,loss\r\n";
  for (const auto& r : log) out << r.batch << ',' << r.epoch << ',' << fmt(r.loss) << "\r\n";
}

namespace detail {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kNumericalError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kCheckpointError;
  }
}

inline LoadedDataset load_for(const Sequential& model, const std::filesystem::path& root, std::ostream& out,
                              std::ostream& err) {
  LoadOptions opts;
  opts.size = model.input_shape()[0];
  LoadedDataset data = load_directory(root, opts);
  out << "loaded " << data.images.size() << " images from " << root.string() << '\n';
  for (std::size_t c = 0; c < data.class_names.size(); ++c) out << "  class " << c << " = " << data.class_names[c] << '\n';
  if (!data.skipped.empty()) {
    err << "skipped " << data.skipped.size() << " unreadable file(s)\n";
    for (const auto& s : data.skipped) err << "  " << s << '\n';
  }
  return data;
}

}  // namespace detail

/// Trains the reference network and writes checkpoint.mcn1, history.csv and
/// cost_log.csv.
inline int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    cfg.train.validate();
    if (cfg.data_root.empty()) throw ConfigError("data_root is not set");
    Rng init_rng(cfg.train.seed);
    Sequential model = build_malaria_net(init_rng, cfg.train.dropout_rate);

    LoadedDataset data = detail::load_for(model, cfg.data_root, out, err);
    model.set_class_names(data.class_names);
    const DatasetSplit parts = split(std::move(data.images), cfg.train.split_ratios, cfg.train.seed, data.class_names);
    out << "split train=" << parts.train.size() << " val=" << parts.val.size() << " test=" << parts.test.size() << '\n';

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + cfg.output_dir.string());

    const TrainResult result = train(model, parts, cfg.train, [&](const EpochMetrics& m) {
      out << "epoch " << m.epoch << " train_loss=" << fmt(m.train_loss) << " train_acc=" << fmt(m.train_accuracy)
          << " val_loss=" << fmt(m.val_loss) << " val_acc=" << fmt(m.val_accuracy) << " (" << fmt(m.wall_time_seconds)
          << " s)\n";
      out.flush();
    });
    out << (result.stopped_early ? "early stop: validation accuracy target reached\n" : "epoch limit reached\n");

    save(model, cfg.checkpoint_path());
    write_history_csv(cfg.output_dir / "history.csv", result.history);
    write_cost_log_csv(cfg.output_dir / "cost_log.csv", result.cost_log);

    const EvalResult test = evaluate(model, parts.test, cfg.train.batch_size);
    out << "test " << metrics_line(test) << '\n';
    return kOk;
  });
}

enum class Partition { train, val, test, all };

inline Partition parse_partition(const std::string& name) {
  if (name == "train") return Partition::train;
  if (name == "val") return Partition::val;
  if (name == "test") return Partition::test;
  if (name == "all") return Partition::all;
  throw ConfigError("unknown split '" + name + "' (expected train, val, test or all)");
}

/// Which images to evaluate on: a partition of the seeded split.
struct SplitSpec {
  Partition partition = Partition::test;
  SplitRatios ratios{0.8, 0.1, 0.1};
  std::uint64_t seed = 42;
  std::size_t batch_size = 64;
};

/// Prints `loss=<float> accuracy=<float>`.
inline int cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_root,
                        const SplitSpec& spec, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const Sequential model = load(checkpoint);
    std::ostringstream log;
    LoadedDataset data = detail::load_for(model, data_root, log, err);
    if (!model.class_names().empty() && model.class_names() != data.class_names)
      err << "warning: dataset class folders differ from the checkpoint's class names\n";
    std::vector<LabeledImage> images;
    if (spec.partition == Partition::all) {
      images = std::move(data.images);
    } else {
      DatasetSplit parts = split(std::move(data.images), spec.ratios, spec.seed);
      images = spec.partition == Partition::train ? std::move(parts.train)
               : spec.partition == Partition::val ? std::move(parts.val)
                                                  : std::move(parts.test);
    }
    out << metrics_line(evaluate(model, images, spec.batch_size)) << '\n';
    return kOk;
  });
}

/// Prints `<class_name> <probability>` for the most likely class.
inline int cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image_path,
                       std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const Sequential model = load(checkpoint);
    RgbImage img = read_png(image_path);
    const std::size_t h = model.input_shape()[0], w = model.input_shape()[1];
    if (img.height != h || img.width != w) img = resize_bilinear(img, h, w);
    Tensor x = normalize(img);
    x.reshape(microcnn::detail::with_batch(1, x.shape()));
    const Tensor probs = model.infer(x);
    const std::size_t best = argmax(probs.data());
    const std::string name =
        best < model.class_names().size() ? model.class_names()[best] : "class" + std::to_string(best);
    out << name << ' ' << fmt(probs[best]) << '\n';
    return kOk;
  });
}

inline int cmd_summary(std::ostream& out) {
  Rng rng(0);
  Sequential model = build_malaria_net(rng);
  out << format_summary(model.summary(), model.trainable_parameter_count());
  return kOk;
}

}  // namespace microcnn::cli
