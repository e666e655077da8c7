#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "quadattack/tensor.hpp"

namespace quadattack {

enum class Activation { Identity, Relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

enum class BackboneKind { Mlp, Conv };

std::string to_string(BackboneKind k);
BackboneKind backbone_from_string(const std::string& s);

/// Architecture of the toy classifier. The MLP backbone maps
/// input_dim -> hidden... -> feature_dim. The conv backbone treats the input
/// as a single-channel image_height x image_width image, applies one
/// feature_dim-channel kernel x kernel convolution (valid padding) and global
/// mean pooling.
struct ArchSpec {
  BackboneKind kind = BackboneKind::Mlp;
  std::size_t input_dim = 64;
  std::vector<std::size_t> hidden{64};
  std::size_t feature_dim = 32;
  std::size_t num_classes = 10;
  Activation hidden_activation = Activation::Relu;
  Activation feature_activation = Activation::Relu;
  std::size_t image_height = 8;
  std::size_t image_width = 8;
  std::size_t kernel = 3;

  bool operator==(const ArchSpec&) const = default;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
  Activation activation = Activation::Relu;
};

struct ConvLayer {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel = 0;
  Eigen::MatrixXd filters;  // channels x (kernel * kernel)
  Eigen::VectorXd bias;     // channels
  Activation activation = Activation::Relu;

  std::size_t out_height() const { return height - kernel + 1; }
  std::size_t out_width() const { return width - kernel + 1; }
  std::size_t positions() const { return out_height() * out_width(); }
};

/// Backbone F plus linear head: logits = head_A * features + head_B.
struct Model {
  ArchSpec arch;
  std::vector<DenseLayer> layers;  // MLP backbone
  std::optional<ConvLayer> conv;   // conv backbone
  Eigen::MatrixXd head_A;          // num_classes x feature_dim
  Eigen::VectorXd head_B;

  std::size_t input_dim() const { return arch.input_dim; }
  std::size_t feature_dim() const { return arch.feature_dim; }
  std::size_t num_classes() const { return arch.num_classes; }

  /// Random He-style initialization.
  static Model initialize(const ArchSpec& arch, std::mt19937_64& rng);

  /// Throws DimensionError if any parameter shape disagrees with `arch`.
  void validate() const;

  std::size_t parameter_count() const;
  /// All parameters in a fixed order: dense layers (weight row-major, bias),
  /// conv (filters row-major, bias), head_A row-major, head_B.
  Eigen::VectorXd flat_parameters() const;
  void set_flat_parameters(const Eigen::VectorXd& flat);
  bool all_finite() const;
};

/// Everything backward needs from a forward pass.
struct ForwardTrace {
  Eigen::VectorXd input;
  std::vector<Eigen::VectorXd> layer_inputs;  // per dense layer
  std::vector<Eigen::VectorXd> pre_activations;
  Eigen::MatrixXd conv_patches;  // positions x (kernel * kernel)
  Eigen::MatrixXd conv_pre;      // channels x positions
  Eigen::VectorXd features;
};

struct ForwardResult {
  Tensor features;  // z-bar, length feature_dim
  Tensor logits;    // length num_classes
  ForwardTrace trace;
};

ForwardResult forward(const Model& model, const Tensor& x);

/// Logits only, no trace. Same arithmetic as forward.
Eigen::VectorXd logits_of(const Model& model, const Eigen::VectorXd& x);
Eigen::VectorXd features_of(const Model& model, const Eigen::VectorXd& x);

/// Gradient buffers mirroring Model's parameters, plus the input gradient.
struct Gradients {
  Eigen::VectorXd input;
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
  Eigen::MatrixXd conv_filters;
  Eigen::VectorXd conv_bias;
  Eigen::MatrixXd head_A;
  Eigen::VectorXd head_B;

  static Gradients zeros_like(const Model& model);
  /// Parameter gradients in Model::flat_parameters order.
  Eigen::VectorXd flat_parameters() const;
};

enum class BackwardScope { InputOnly, All };

/// Reverse-mode pass. `grad_logits` is dLoss/dlogits; `grad_features`, when
/// given, is an additional direct dLoss/dfeatures term. Results are added
/// into `accum`.
void backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
              const Tensor* grad_features, Gradients& accum,
              BackwardScope scope = BackwardScope::All);

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits,
                   const Tensor* grad_features = nullptr,
                   BackwardScope scope = BackwardScope::All);

/// Index of the largest logit (lowest index on ties).
std::size_t predict(const Model& model, const Eigen::VectorXd& x);

}  // namespace quadattack
