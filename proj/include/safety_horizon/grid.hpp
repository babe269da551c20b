#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace safety_horizon {

/// One axis of a rectangular grid: n nodes uniformly spaced on [min, max].
struct AxisSpec {
  double min = 0.0;
  double max = 1.0;
  int n = 2;

  double spacing() const { return (max - min) / static_cast<double>(n - 1); }
  double coord(int i) const { return min + spacing() * static_cast<double>(i); }

  void validate() const {
    if (n < 2) throw std::invalid_argument("AxisSpec: need at least 2 nodes per axis");
    if (!(max > min)) throw std::invalid_argument("AxisSpec: max must exceed min");
  }
};

/// Scalar field on a rectangular grid with multilinear value and gradient
/// queries. Storage is row-major with the last axis fastest. Out-of-domain
/// queries clamp to the boundary and report the clamp through a flag so
/// callers can count excursions instead of failing.
class GridField {
public:
  static constexpr int kMaxDim = 8;

  GridField() = default;
  explicit GridField(std::vector<AxisSpec> axes);
  GridField(std::vector<AxisSpec> axes, std::vector<double> values);

  int dim() const { return static_cast<int>(axes_.size()); }
  std::size_t size() const { return values_.size(); }
  const std::vector<AxisSpec>& axes() const { return axes_; }
  const AxisSpec& axis(int i) const { return axes_[static_cast<std::size_t>(i)]; }
  std::size_t stride(int i) const { return strides_[static_cast<std::size_t>(i)]; }
  double max_spacing() const;

  const std::vector<double>& values() const { return values_; }
  double value_at(std::size_t flat) const { return values_[flat]; }
  void set_value_at(std::size_t flat, double v) { values_[flat] = v; }
  /// Replaces the full node array; length and finiteness are checked.
  void set_values(std::vector<double> values);

  /// Multilinear interpolation over the 2^d enclosing nodes.
  double interpolate(const Eigen::Ref<const Eigen::VectorXd>& x, bool* clamped = nullptr) const;

  /// Interpolates the precomputed node-gradient field. Requires
  /// compute_node_gradients() (or a loader that restores gradients) first.
  void gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out,
                bool* clamped = nullptr) const;
  Eigen::VectorXd gradient(const Eigen::Ref<const Eigen::VectorXd>& x, bool* clamped = nullptr) const;

  /// One-time pass: central differences at interior nodes, one-sided at the
  /// boundary. Safe to call again after set_values.
  void compute_node_gradients(int workers = 0);
  bool has_node_gradients() const { return !node_gradients_.empty(); }

  /// Visits every node in row-major order (last axis fastest). The index and
  /// coordinate buffers passed to the callback are reused between calls.
  void for_each_node(
      const std::function<void(std::size_t flat, const std::vector<int>& idx,
                               const Eigen::VectorXd& x)>& fn) const;

  /// Flat index <-> multi-index helpers.
  std::size_t flat_index(const std::vector<int>& idx) const;
  void node_coordinates(const std::vector<int>& idx, Eigen::VectorXd& x) const;

private:
  struct CellQuery {
    int cell[kMaxDim];
    double frac[kMaxDim];
    bool clamped;
  };
  CellQuery locate(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  std::vector<AxisSpec> axes_;
  std::vector<std::size_t> strides_;
  std::vector<double> values_;
  std::vector<double> node_gradients_;  // size() * dim(), axis-major per node
};

}  // namespace safety_horizon
