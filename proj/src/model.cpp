#include "quadattack/model.hpp"

#include <cmath>

#include "quadattack/error.hpp"

namespace quadattack {

std::string to_string(Activation a) { return a == Activation::Relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ValidationError("unknown activation '" + s + "'");
}

std::string to_string(BackboneKind k) { return k == BackboneKind::Conv ? "conv" : "mlp"; }

BackboneKind backbone_from_string(const std::string& s) {
  if (s == "mlp") return BackboneKind::Mlp;
  if (s == "conv") return BackboneKind::Conv;
  throw ValidationError("unknown backbone '" + s + "'");
}

namespace {

Eigen::VectorXd activate(const Eigen::VectorXd& pre, Activation a) {
  if (a == Activation::Identity) return pre;
  return pre.unaryExpr([](double v) { return v > 0.0 ? v : 0.0; });
}

// ReLU subgradient at exactly 0 is 0.
Eigen::VectorXd activation_mask(const Eigen::VectorXd& pre, Activation a) {
  if (a == Activation::Identity) return Eigen::VectorXd::Ones(pre.size());
  return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Eigen::MatrixXd he_normal(Eigen::Index rows, Eigen::Index cols, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  return m;
}

Eigen::MatrixXd extract_patches(const ConvLayer& conv, const Eigen::VectorXd& x) {
  const std::size_t oh = conv.out_height(), ow = conv.out_width(), k = conv.kernel;
  Eigen::MatrixXd patches(static_cast<Eigen::Index>(oh * ow), static_cast<Eigen::Index>(k * k));
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j)
          patches(static_cast<Eigen::Index>(r * ow + c), static_cast<Eigen::Index>(i * k + j)) =
              x[static_cast<Eigen::Index>((r + i) * conv.width + (c + j))];
  return patches;
}

void check_input(const Model& model, std::size_t n) {
  if (n != model.input_dim()) {
    throw DimensionError("input length " + std::to_string(n) + " does not match model input_dim " +
                         std::to_string(model.input_dim()));
  }
}

}  // namespace

Model Model::initialize(const ArchSpec& arch, std::mt19937_64& rng) {
  Model m;
  m.arch = arch;
  if (arch.kind == BackboneKind::Mlp) {
    std::size_t in = arch.input_dim;
    std::vector<std::size_t> widths = arch.hidden;
    widths.push_back(arch.feature_dim);
    for (std::size_t i = 0; i < widths.size(); ++i) {
      DenseLayer layer;
      layer.weight = he_normal(static_cast<Eigen::Index>(widths[i]), static_cast<Eigen::Index>(in), in, rng);
      layer.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(widths[i]));
      layer.activation = i + 1 == widths.size() ? arch.feature_activation : arch.hidden_activation;
      m.layers.push_back(std::move(layer));
      in = widths[i];
    }
  } else {
    if (arch.image_height * arch.image_width != arch.input_dim || arch.kernel == 0 ||
        arch.kernel > arch.image_height || arch.kernel > arch.image_width) {
      throw DimensionError("conv backbone requires input_dim = image_height * image_width and kernel <= image side");
    }
    ConvLayer conv;
    conv.height = arch.image_height;
    conv.width = arch.image_width;
    conv.kernel = arch.kernel;
    conv.filters = he_normal(static_cast<Eigen::Index>(arch.feature_dim),
                             static_cast<Eigen::Index>(arch.kernel * arch.kernel), arch.kernel * arch.kernel, rng);
    conv.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.feature_dim));
    conv.activation = arch.feature_activation;
    m.conv = std::move(conv);
  }
  m.head_A = he_normal(static_cast<Eigen::Index>(arch.num_classes), static_cast<Eigen::Index>(arch.feature_dim),
                       arch.feature_dim, rng) *
             std::sqrt(0.5);
  m.head_B = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.num_classes));
  m.validate();
  return m;
}

void Model::validate() const {
  const auto D = static_cast<Eigen::Index>(arch.feature_dim);
  const auto C = static_cast<Eigen::Index>(arch.num_classes);
  if (arch.kind == BackboneKind::Mlp) {
    Eigen::Index in = static_cast<Eigen::Index>(arch.input_dim);
    for (const auto& layer : layers) {
      if (layer.weight.cols() != in || layer.bias.size() != layer.weight.rows()) {
        throw DimensionError("dense layer shape mismatch");
      }
      in = layer.weight.rows();
    }
    if (in != D) throw DimensionError("last backbone layer width does not equal feature_dim");
    if (conv) throw DimensionError("mlp model carries a conv layer");
  } else {
    if (!conv || !layers.empty()) throw DimensionError("conv model must have exactly one conv layer");
    if (conv->height * conv->width != arch.input_dim ||
        conv->filters.cols() != static_cast<Eigen::Index>(conv->kernel * conv->kernel) ||
        conv->filters.rows() != D || conv->bias.size() != D) {
      throw DimensionError("conv layer shape mismatch");
    }
  }
  if (head_A.rows() != C || head_A.cols() != D) {
    throw DimensionError("head_A must be num_classes x feature_dim");
  }
  if (head_B.size() != C) throw DimensionError("head_B must have num_classes entries");
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  if (conv) n += static_cast<std::size_t>(conv->filters.size() + conv->bias.size());
  n += static_cast<std::size_t>(head_A.size() + head_B.size());
  return n;
}

namespace {

// Row-major copy helpers shared by flatten/unflatten.
void write_matrix(Eigen::VectorXd& out, Eigen::Index& pos, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[pos++] = m(r, c);
}
void write_vector(Eigen::VectorXd& out, Eigen::Index& pos, const Eigen::VectorXd& v) {
  out.segment(pos, v.size()) = v;
  pos += v.size();
}
void read_matrix(const Eigen::VectorXd& in, Eigen::Index& pos, Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = in[pos++];
}
void read_vector(const Eigen::VectorXd& in, Eigen::Index& pos, Eigen::VectorXd& v) {
  v = in.segment(pos, v.size());
  pos += v.size();
}

}  // namespace

Eigen::VectorXd Model::flat_parameters() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index pos = 0;
  for (const auto& l : layers) {
    write_matrix(out, pos, l.weight);
    write_vector(out, pos, l.bias);
  }
  if (conv) {
    write_matrix(out, pos, conv->filters);
    write_vector(out, pos, conv->bias);
  }
  write_matrix(out, pos, head_A);
  write_vector(out, pos, head_B);
  return out;
}

void Model::set_flat_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw DimensionError("flat parameter vector has wrong length");
  }
  Eigen::Index pos = 0;
  for (auto& l : layers) {
    read_matrix(flat, pos, l.weight);
    read_vector(flat, pos, l.bias);
  }
  if (conv) {
    read_matrix(flat, pos, conv->filters);
    read_vector(flat, pos, conv->bias);
  }
  read_matrix(flat, pos, head_A);
  read_vector(flat, pos, head_B);
}

bool Model::all_finite() const { return flat_parameters().allFinite(); }

ForwardResult forward(const Model& model, const Tensor& x) {
  check_input(model, x.size());
  ForwardTrace trace;
  trace.input = x.vec();
  Eigen::VectorXd h = trace.input;
  if (model.conv) {
    const ConvLayer& conv = *model.conv;
    trace.conv_patches = extract_patches(conv, h);
    trace.conv_pre = (conv.filters * trace.conv_patches.transpose()).colwise() + conv.bias;
    Eigen::MatrixXd post = conv.activation == Activation::Relu ? trace.conv_pre.cwiseMax(0.0) : trace.conv_pre;
    h = post.rowwise().mean();
  } else {
    for (const auto& layer : model.layers) {
      trace.layer_inputs.push_back(h);
      Eigen::VectorXd pre = layer.weight * h + layer.bias;
      h = activate(pre, layer.activation);
      trace.pre_activations.push_back(std::move(pre));
    }
  }
  trace.features = h;
  Eigen::VectorXd logits = model.head_A * h + model.head_B;
  ForwardResult result{Tensor::from_vector(h), Tensor::from_vector(logits), std::move(trace)};
  return result;
}

Eigen::VectorXd features_of(const Model& model, const Eigen::VectorXd& x) {
  return forward(model, Tensor::from_vector(x)).features.vec();
}

Eigen::VectorXd logits_of(const Model& model, const Eigen::VectorXd& x) {
  return forward(model, Tensor::from_vector(x)).logits.vec();
}

Gradients Gradients::zeros_like(const Model& model) {
  Gradients g;
  g.input = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(model.input_dim()));
  for (const auto& l : model.layers) {
    g.weight.push_back(Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
    g.bias.push_back(Eigen::VectorXd::Zero(l.bias.size()));
  }
  if (model.conv) {
    g.conv_filters = Eigen::MatrixXd::Zero(model.conv->filters.rows(), model.conv->filters.cols());
    g.conv_bias = Eigen::VectorXd::Zero(model.conv->bias.size());
  }
  g.head_A = Eigen::MatrixXd::Zero(model.head_A.rows(), model.head_A.cols());
  g.head_B = Eigen::VectorXd::Zero(model.head_B.size());
  return g;
}

Eigen::VectorXd Gradients::flat_parameters() const {
  Eigen::Index n = head_A.size() + head_B.size() + conv_filters.size() + conv_bias.size();
  for (std::size_t i = 0; i < weight.size(); ++i) n += weight[i].size() + bias[i].size();
  Eigen::VectorXd out(n);
  Eigen::Index pos = 0;
  for (std::size_t i = 0; i < weight.size(); ++i) {
    write_matrix(out, pos, weight[i]);
    write_vector(out, pos, bias[i]);
  }
  if (conv_filters.size() > 0) {
    write_matrix(out, pos, conv_filters);
    write_vector(out, pos, conv_bias);
  }
  write_matrix(out, pos, head_A);
  write_vector(out, pos, head_B);
  return out;
}

void backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
              const Tensor* grad_features, Gradients& accum, BackwardScope scope) {
  const auto C = static_cast<Eigen::Index>(model.num_classes());
  const auto D = static_cast<Eigen::Index>(model.feature_dim());
  if (static_cast<Eigen::Index>(grad_logits.size()) != C) {
    throw DimensionError("logit gradient length does not match num_classes");
  }
  if (grad_features && static_cast<Eigen::Index>(grad_features->size()) != D) {
    throw DimensionError("feature gradient length does not match feature_dim");
  }
  if (trace.features.size() != D || trace.input.size() != static_cast<Eigen::Index>(model.input_dim())) {
    throw DimensionError("trace does not belong to this model");
  }
  const bool params = scope == BackwardScope::All;
  const auto gl = grad_logits.vec();

  if (params) {
    accum.head_A.noalias() += gl * trace.features.transpose();
    accum.head_B += gl;
  }
  Eigen::VectorXd g = model.head_A.transpose() * gl;
  if (grad_features) g += grad_features->vec();

  if (model.conv) {
    const ConvLayer& conv = *model.conv;
    const auto positions = static_cast<double>(conv.positions());
    Eigen::MatrixXd g_pre = (g / positions).replicate(1, trace.conv_pre.cols());
    if (conv.activation == Activation::Relu) {
      g_pre = g_pre.cwiseProduct(trace.conv_pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    }
    if (params) {
      accum.conv_filters.noalias() += g_pre * trace.conv_patches;
      accum.conv_bias += g_pre.rowwise().sum();
    }
    const Eigen::MatrixXd g_patches = g_pre.transpose() * conv.filters;  // positions x k*k
    const std::size_t ow = conv.out_width(), k = conv.kernel;
    for (std::size_t r = 0; r < conv.out_height(); ++r)
      for (std::size_t c = 0; c < ow; ++c)
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j)
            accum.input[static_cast<Eigen::Index>((r + i) * conv.width + (c + j))] +=
                g_patches(static_cast<Eigen::Index>(r * ow + c), static_cast<Eigen::Index>(i * k + j));
    return;
  }

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const DenseLayer& layer = model.layers[li];
    const Eigen::VectorXd g_pre = g.cwiseProduct(activation_mask(trace.pre_activations[li], layer.activation));
    if (params) {
      accum.weight[li].noalias() += g_pre * trace.layer_inputs[li].transpose();
      accum.bias[li] += g_pre;
    }
    g = layer.weight.transpose() * g_pre;
  }
  accum.input += g;
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
                   const Tensor* grad_features, BackwardScope scope) {
  Gradients g = Gradients::zeros_like(model);
  backward(model, trace, grad_logits, grad_features, g, scope);
  return g;
}

std::size_t predict(const Model& model, const Eigen::VectorXd& x) {
  Eigen::Index best = 0;
  logits_of(model, x).maxCoeff(&best);
  return static_cast<std::size_t>(best);
}

}  // namespace quadattack
