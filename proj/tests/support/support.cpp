#include "support.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

#include <Eigen/Dense>

#include "quadattack/train.hpp"

namespace qa_test {

using namespace quadattack;

namespace {

Eigen::VectorXd act(const Eigen::VectorXd& v, Activation a) {
  if (a == Activation::Identity) return v;
  Eigen::VectorXd out = v;
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = out(i) > 0 ? out(i) : 0.0;
  return out;
}

}  // namespace

Eigen::VectorXd hand_logits(const Model& m, const Eigen::VectorXd& x) {
  Eigen::VectorXd z;
  if (m.conv) {
    const ConvLayer& c = *m.conv;
    const std::size_t oh = c.height - c.kernel + 1, ow = c.width - c.kernel + 1;
    z = Eigen::VectorXd::Zero(c.filters.rows());
    for (Eigen::Index f = 0; f < c.filters.rows(); ++f) {
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t col = 0; col < ow; ++col) {
          double s = c.bias(f);
          for (std::size_t i = 0; i < c.kernel; ++i)
            for (std::size_t j = 0; j < c.kernel; ++j)
              s += c.filters(f, static_cast<Eigen::Index>(i * c.kernel + j)) *
                   x(static_cast<Eigen::Index>((r + i) * c.width + col + j));
          if (c.activation == Activation::Relu && s < 0) s = 0;
          z(f) += s;
        }
      }
    }
    z /= static_cast<double>(oh * ow);
  } else {
    z = x;
    for (const auto& layer : m.layers) {
      Eigen::VectorXd pre(layer.weight.rows());
      for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
        double s = layer.bias(r);
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) s += layer.weight(r, c) * z(c);
        pre(r) = s;
      }
      z = act(pre, layer.activation);
    }
  }
  Eigen::VectorXd l(m.head_A.rows());
  for (Eigen::Index r = 0; r < l.size(); ++r) {
    double s = m.head_B(r);
    for (Eigen::Index c = 0; c < z.size(); ++c) s += m.head_A(r, c) * z(c);
    l(r) = s;
  }
  return l;
}

Eigen::VectorXd projection_oracle(const Eigen::VectorXd& z_bar, const Eigen::MatrixXd& G, const Eigen::VectorXd& h,
                                  const Eigen::MatrixXd& W, const Eigen::VectorXd& b) {
  const Eigen::Index m = G.rows(), e = W.rows(), d = z_bar.size();
  Eigen::VectorXd best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::uint32_t mask = 0; mask < (1u << m); ++mask) {
    const Eigen::Index rows = e + static_cast<Eigen::Index>(__builtin_popcount(mask));
    Eigen::MatrixXd A(rows, d);
    Eigen::VectorXd c(rows);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < e; ++i, ++r) {
      A.row(r) = W.row(i);
      c(r) = b(i);
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      if (!(mask >> i & 1u)) continue;
      A.row(r) = G.row(i);
      c(r) = h(i);
      ++r;
    }
    Eigen::VectorXd z = z_bar;
    if (rows > 0) {
      // Closest point of the affine set {Az = c} (skipped when inconsistent).
      Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(A);
      const Eigen::VectorXd shift = cod.solve(A * z_bar - c);
      z = z_bar - shift;
      if ((A * z - c).lpNorm<Eigen::Infinity>() > 1e-9) continue;
    }
    if (m > 0 && ((G * z - h).array() > 1e-10).any()) continue;
    if (e > 0 && (W * z - b).lpNorm<Eigen::Infinity>() > 1e-9) continue;
    const double dist = (z - z_bar).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = z;
    }
  }
  return best;
}

Eigen::VectorXd gaussian(std::mt19937_64& rng, Eigen::Index n, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

TargetList random_targets(std::mt19937_64& rng, std::size_t c, std::size_t k) {
  std::vector<std::size_t> classes(c);
  for (std::size_t i = 0; i < c; ++i) classes[i] = i;
  std::shuffle(classes.begin(), classes.end(), rng);
  TargetList t;
  t.num_classes = c;
  t.targets.assign(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(k));
  return t;
}

const Toy& toy() {
  static const Toy instance = [] {
    Toy t;
    BlobSpec spec;
    spec.seed = 1;
    t.data = make_blobs(spec);
    TrainConfig tc;
    tc.seed = 2;
    TrainResult r = train_toy(t.data, ArchSpec{}, tc);
    t.model = std::move(r.model);
    t.accuracy = r.train_accuracy;
    return t;
  }();
  return instance;
}

std::filesystem::path golden_dir() { return QA_GOLDEN_DIR; }

bool regenerate_golden() {
  const char* v = std::getenv("QUADATTACK_REGEN_GOLDEN");
  return v && std::string(v) == "1";
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string check_golden(const std::string& name, const std::string& text) {
  const auto path = golden_dir() / name;
  if (regenerate_golden()) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    return {};
  }
  if (!std::filesystem::exists(path)) return "missing golden file " + path.string();
  const std::string expected = read_file(path);
  if (expected == text) return {};
  std::size_t i = 0;
  while (i < expected.size() && i < text.size() && expected[i] == text[i]) ++i;
  return name + " differs at byte " + std::to_string(i);
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(QA_SCRATCH_DIR) / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace qa_test
