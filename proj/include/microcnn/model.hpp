#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "microcnn/errors.hpp"
#include "microcnn/layers.hpp"
#include "microcnn/loss_optim.hpp"
#include "microcnn/tensor.hpp"

namespace microcnn {

struct SummaryRow {
  std::string layer_name;
  std::string kind;
  std::optional<Shape> output_shape;  // per sample; empty on the total row
  std::size_t param_count = 0;
};

/// Called after every layer during forward with that layer's output.
using ForwardHook = std::function<void(const Layer&, const Tensor&)>;

/// Ordered stack of layers with one Adam state per trainable tensor.
class Sequential {
 public:
  explicit Sequential(Shape input_shape) : input_shape_(std::move(input_shape)) {}

  /// Appends a layer after checking it accepts the current output shape.
  Layer& add(std::unique_ptr<Layer> layer) {
    layer->output_shape(output_shape());
    for (const auto& l : layers_)
      if (l->name() == layer->name()) throw std::invalid_argument("duplicate layer name " + layer->name());
    layers_.push_back(std::move(layer));
    adam_.clear();
    return *layers_.back();
  }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(layer));
    return ref;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  Layer* find(const std::string& name) {
    for (auto& l : layers_)
      if (l->name() == name) return l.get();
    return nullptr;
  }

  const Shape& input_shape() const { return input_shape_; }
  Shape output_shape() const {
    Shape s = input_shape_;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
  }

  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_class_names(std::vector<std::string> names) { class_names_ = std::move(names); }

  Tensor forward(const Tensor& x, Mode mode, const ForwardHook& hook = {}) {
    check_input(x);
    Tensor h = x;
    for (auto& l : layers_) {
      h = l->forward(h, mode);
      if (hook) hook(*l, h);
    }
    return h;
  }

  /// Read-only inference; safe to call concurrently on a shared model.
  Tensor infer(const Tensor& x) const {
    check_input(x);
    Tensor h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }

  /// Backpropagates through layers [0, end) in reverse. `end` defaults to
  /// all layers.
  Tensor backward(const Tensor& grad, std::optional<std::size_t> end = std::nullopt) {
    Tensor g = grad;
    for (std::size_t i = end.value_or(layers_.size()); i-- > 0;) g = layers_[i]->backward(g);
    return g;
  }

  std::vector<ParamRef> params() {
    std::vector<ParamRef> all;
    for (auto& l : layers_)
      for (auto& p : l->params()) all.push_back(std::move(p));
    return all;
  }

  std::vector<ParamRef> trainable_params() {
    std::vector<ParamRef> out;
    for (auto& p : params())
      if (p.trainable()) out.push_back(std::move(p));
    return out;
  }

  void zero_grad() {
    for (auto& l : layers_) l->zero_grad();
  }

  void set_optimizer(AdamConfig config) {
    optimizer_ = config;
    for (auto& s : adam_) s.config = config;
  }
  const AdamConfig& optimizer() const { return optimizer_; }

  /// Forward (train) -> cross-entropy -> backward -> one Adam step on every
  /// trainable tensor. Returns the loss before the update. The final layer
  /// must be a softmax; its gradient is fused with the loss.
  LossValue train_step(const Tensor& x, const Tensor& onehot, Tensor* probs_out = nullptr) {
    if (layers_.empty() || layers_.back()->kind() != "softmax")
      throw std::logic_error("train_step requires a model ending in a softmax layer");
    Tensor probs = forward(x, Mode::train);
    LossValue loss = cross_entropy(probs, onehot);
    zero_grad();
    backward(softmax_xent_backward(probs, onehot), layers_.size() - 1);

    auto trainable = trainable_params();
    if (adam_.size() != trainable.size()) {
      adam_.clear();
      for (auto& p : trainable) adam_.emplace_back(p.value->shape(), optimizer_);
    }
    for (std::size_t i = 0; i < trainable.size(); ++i) adam_step(*trainable[i].value, *trainable[i].grad, adam_[i]);
    if (probs_out) *probs_out = std::move(probs);
    return loss;
  }

  const std::vector<AdamState>& adam_states() const { return adam_; }

  /// Sum over layers, counting batch-norm running statistics.
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l->parameter_count();
    return total;
  }

  std::size_t trainable_parameter_count() {
    std::size_t total = 0;
    for (auto& p : trainable_params()) total += p.value->size();
    return total;
  }

  /// One row per layer followed by a total row.
  std::vector<SummaryRow> summary() const {
    std::vector<SummaryRow> rows;
    Shape s = input_shape_;
    for (const auto& l : layers_) {
      s = l->output_shape(s);
      rows.push_back({l->name(), l->kind(), s, l->parameter_count()});
    }
    rows.push_back({"Total", "", std::nullopt, parameter_count()});
    return rows;
  }

  /// Canonical architecture text stored in checkpoints.
  std::string descriptor() const {
    std::ostringstream os;
    os << "microcnn-sequential\ninput";
    for (std::size_t i = 0; i < input_shape_.rank(); ++i) os << (i ? "," : " ") << input_shape_[i];
    os << '\n';
    for (const auto& c : class_names_) os << "class " << c << '\n';
    for (const auto& l : layers_) os << "layer " << l->name() << ' ' << l->descriptor() << '\n';
    return os.str();
  }

 private:
  void check_input(const Tensor& x) const {
    if (x.rank() != input_shape_.rank() + 1 ||
        !std::equal(input_shape_.dims().begin(), input_shape_.dims().end(), x.shape().dims().begin() + 1))
      throw DimensionError("input: expected [N," + input_shape_.to_string().substr(1) + " batch, got " +
                           x.shape().to_string());
  }

  Shape input_shape_;
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> class_names_;
  AdamConfig optimizer_;
  std::vector<AdamState> adam_;
};

/// The two-block malaria cell classifier:
///   [64,64,3] -> (conv 32@3x3 + ReLU -> maxpool 2 -> batchnorm -> dropout) x2
///   -> flatten -> (dense + ReLU -> batchnorm -> dropout) for 512 and 256
///   -> dense 2 -> softmax
inline Sequential build_malaria_net(Rng& rng, float dropout_rate = 0.2f) {
  Sequential net(Shape{64, 64, 3});
  net.emplace<Conv2D>("conv1", 3, 32, 3, 3, 1, Activation::relu, rng);
  net.emplace<MaxPool2D>("pool1", 2);
  net.emplace<BatchNorm>("bn1", 32);
  net.emplace<Dropout>("drop1", dropout_rate, rng.split());
  net.emplace<Conv2D>("conv2", 32, 32, 3, 3, 1, Activation::relu, rng);
  net.emplace<MaxPool2D>("pool2", 2);
  net.emplace<BatchNorm>("bn2", 32);
  net.emplace<Dropout>("drop2", dropout_rate, rng.split());
  net.emplace<Flatten>("flatten");
  net.emplace<Dense>("dense1", 6272, 512, Activation::relu, rng);
  net.emplace<BatchNorm>("bn3", 512);
  net.emplace<Dropout>("drop3", dropout_rate, rng.split());
  net.emplace<Dense>("dense2", 512, 256, Activation::relu, rng);
  net.emplace<BatchNorm>("bn4", 256);
  net.emplace<Dropout>("drop4", dropout_rate, rng.split());
  net.emplace<Dense>("dense3", 256, 2, Activation::none, rng);
  net.emplace<ActivationLayer>("softmax", ActivationLayer::Kind::softmax);
  return net;
}

inline std::size_t parameter_count(const Sequential& model) { return model.parameter_count(); }

/// Text table with one row per layer and thousands-separated totals.
inline std::string format_summary(const std::vector<SummaryRow>& rows, std::size_t trainable) {
  auto group = [](std::size_t v) {
    std::string s = std::to_string(v);
    for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
    return s;
  };
  auto shape_text = [](const Shape& s) {
    std::string t = "(None";
    for (auto d : s.dims()) t += ", " + std::to_string(d);
    return t + ")";
  };
  std::ostringstream os;
  auto line = [&](char c) { os << std::string(72, c) << '\n'; };
  auto cell = [&](const std::string& text, std::size_t width) {
    os << text;
    if (text.size() < width) os << std::string(width - text.size(), ' ');
  };
  line('_');
  cell("Layer (type)", 30);
  cell("Output Shape", 26);
  os << "Param #\n";
  line('=');
  std::size_t total = 0;
  for (const auto& r : rows) {
    if (!r.output_shape) {
      total = r.param_count;
      continue;
    }
    cell(r.layer_name + " (" + r.kind + ")", 30);
    cell(shape_text(*r.output_shape), 26);
    os << group(r.param_count) << '\n';
  }
  line('=');
  os << "Total params: " << group(total) << '\n';
  os << "Trainable params: " << group(trainable) << '\n';
  os << "Non-trainable params: " << group(total - trainable) << '\n';
  line('_');
  return os.str();
}

// ---------------------------------------------------------------------------
// Rebuilding a model from its descriptor text.

namespace detail {

inline std::map<std::string, std::string> parse_options(std::istringstream& in, const std::string& line) {
  std::map<std::string, std::string> opts;
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos || eq == 0)
      throw CheckpointError("malformed descriptor option '" + token + "' in: " + line);
    opts[token.substr(0, eq)] = token.substr(eq + 1);
  }
  return opts;
}

inline std::size_t option_size(const std::map<std::string, std::string>& o, const std::string& key,
                               const std::string& line) {
  auto it = o.find(key);
  if (it == o.end()) throw CheckpointError("descriptor missing '" + key + "' in: " + line);
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw CheckpointError("descriptor has bad value for '" + key + "' in: " + line);
  }
}

inline float option_float(const std::map<std::string, std::string>& o, const std::string& key,
                          const std::string& line) {
  auto it = o.find(key);
  if (it == o.end()) throw CheckpointError("descriptor missing '" + key + "' in: " + line);
  try {
    return std::stof(it->second);
  } catch (const std::exception&) {
    throw CheckpointError("descriptor has bad value for '" + key + "' in: " + line);
  }
}

inline Activation option_activation(const std::map<std::string, std::string>& o, const std::string& line) {
  auto it = o.find("act");
  if (it == o.end()) throw CheckpointError("descriptor missing 'act' in: " + line);
  if (it->second == "relu") return Activation::relu;
  if (it->second == "none") return Activation::none;
  throw CheckpointError("unknown activation '" + it->second + "' in: " + line);
}

}  // namespace detail

/// Inverse of Sequential::descriptor(). Weights are freshly initialised and
/// expected to be overwritten by the caller.
inline Sequential sequential_from_descriptor(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || line != "microcnn-sequential")
    throw CheckpointError("descriptor does not start with 'microcnn-sequential'");
  if (!std::getline(lines, line) || line.rfind("input ", 0) != 0)
    throw CheckpointError("descriptor is missing the input line");
  std::vector<std::size_t> dims;
  {
    std::istringstream in(line.substr(6));
    std::string d;
    while (std::getline(in, d, ',')) {
      try {
        dims.push_back(std::stoull(d));
      } catch (const std::exception&) {
        throw CheckpointError("bad input shape in descriptor: " + line);
      }
    }
  }
  Sequential net{Shape(dims)};
  std::vector<std::string> classes;
  Rng rng(0);
  try {
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      if (line.rfind("class ", 0) == 0) {
        classes.push_back(line.substr(6));
        continue;
      }
      std::istringstream in(line);
      std::string tag, name, kind;
      in >> tag >> name >> kind;
      if (tag != "layer" || name.empty() || kind.empty())
        throw CheckpointError("unrecognised descriptor line: " + line);
      const auto o = detail::parse_options(in, line);
      using namespace detail;
      if (kind == "conv2d") {
        net.emplace<Conv2D>(name, option_size(o, "in", line), option_size(o, "filters", line),
                            option_size(o, "kh", line), option_size(o, "kw", line),
                            option_size(o, "stride", line), option_activation(o, line), rng);
      } else if (kind == "maxpool") {
        net.emplace<MaxPool2D>(name, option_size(o, "size", line));
      } else if (kind == "batchnorm") {
        net.emplace<BatchNorm>(name, option_size(o, "channels", line), option_float(o, "momentum", line),
                               option_float(o, "epsilon", line));
      } else if (kind == "dropout") {
        net.emplace<Dropout>(name, option_float(o, "rate", line), rng.split());
      } else if (kind == "flatten") {
        net.emplace<Flatten>(name);
      } else if (kind == "dense") {
        net.emplace<Dense>(name, option_size(o, "in", line), option_size(o, "out", line),
                           option_activation(o, line), rng);
      } else if (kind == "relu") {
        net.emplace<ActivationLayer>(name, ActivationLayer::Kind::relu);
      } else if (kind == "softmax") {
        net.emplace<ActivationLayer>(name, ActivationLayer::Kind::softmax);
      } else {
        throw CheckpointError("unknown layer kind '" + kind + "' in descriptor");
      }
    }
  } catch (const DimensionError& e) {
    throw CheckpointError(std::string("descriptor describes an inconsistent network: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("descriptor rejected: ") + e.what());
  }
  net.set_class_names(std::move(classes));
  return net;
}

}  // namespace microcnn
