#include "safety_horizon/grid.hpp"

#include "safety_horizon/parallel.hpp"

#include <cmath>

namespace safety_horizon {

namespace {

std::vector<std::size_t> make_strides(const std::vector<AxisSpec>& axes) {
  std::vector<std::size_t> strides(axes.size(), 1);
  for (int i = static_cast<int>(axes.size()) - 2; i >= 0; --i) {
    strides[static_cast<std::size_t>(i)] =
        strides[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(axes[static_cast<std::size_t>(i) + 1].n);
  }
  return strides;
}

std::size_t node_count(const std::vector<AxisSpec>& axes) {
  std::size_t total = 1;
  for (const auto& a : axes) total *= static_cast<std::size_t>(a.n);
  return total;
}

}  // namespace

GridField::GridField(std::vector<AxisSpec> axes) : axes_(std::move(axes)) {
  if (axes_.empty() || dim() > kMaxDim) throw std::invalid_argument("GridField: unsupported dimension");
  for (const auto& a : axes_) a.validate();
  strides_ = make_strides(axes_);
  values_.assign(node_count(axes_), 0.0);
}

GridField::GridField(std::vector<AxisSpec> axes, std::vector<double> values) : GridField(std::move(axes)) {
  set_values(std::move(values));
}

double GridField::max_spacing() const {
  double m = 0.0;
  for (const auto& a : axes_) m = std::max(m, a.spacing());
  return m;
}

void GridField::set_values(std::vector<double> values) {
  if (values.size() != node_count(axes_)) throw std::invalid_argument("GridField: value array length mismatch");
  for (double v : values) {
    if (!std::isfinite(v)) throw std::invalid_argument("GridField: non-finite node value");
  }
  values_ = std::move(values);
  node_gradients_.clear();
}

GridField::CellQuery GridField::locate(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw std::invalid_argument("GridField: query dimension mismatch");
  CellQuery q;
  q.clamped = false;
  for (int i = 0; i < dim(); ++i) {
    const double xi = x[i];
    if (!std::isfinite(xi)) throw std::invalid_argument("GridField: non-finite query coordinate");
    const AxisSpec& a = axes_[static_cast<std::size_t>(i)];
    const double t = (xi - a.min) / a.spacing();
    if (t <= 0.0) {
      q.cell[i] = 0;
      q.frac[i] = 0.0;
      if (t < 0.0) q.clamped = true;
    } else if (t >= static_cast<double>(a.n - 1)) {
      q.cell[i] = a.n - 2;
      q.frac[i] = 1.0;
      if (t > static_cast<double>(a.n - 1)) q.clamped = true;
    } else {
      int c = static_cast<int>(t);
      if (c > a.n - 2) c = a.n - 2;
      q.cell[i] = c;
      q.frac[i] = t - static_cast<double>(c);
    }
  }
  return q;
}

double GridField::interpolate(const Eigen::Ref<const Eigen::VectorXd>& x, bool* clamped) const {
  const CellQuery q = locate(x);
  if (clamped) *clamped = q.clamped;
  const int d = dim();
  std::size_t base = 0;
  for (int i = 0; i < d; ++i) base += static_cast<std::size_t>(q.cell[i]) * strides_[static_cast<std::size_t>(i)];
  double acc = 0.0;
  const unsigned corners = 1u << d;
  for (unsigned c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t off = 0;
    for (int i = 0; i < d; ++i) {
      if (c & (1u << i)) {
        w *= q.frac[i];
        off += strides_[static_cast<std::size_t>(i)];
      } else {
        w *= 1.0 - q.frac[i];
      }
    }
    if (w != 0.0) acc += w * values_[base + off];
  }
  return acc;
}

void GridField::gradient(const Eigen::Ref<const Eigen::VectorXd>& x, Eigen::Ref<Eigen::VectorXd> out,
                         bool* clamped) const {
  if (node_gradients_.empty()) throw std::logic_error("GridField: node gradients not computed");
  const CellQuery q = locate(x);
  if (clamped) *clamped = q.clamped;
  const int d = dim();
  std::size_t base = 0;
  for (int i = 0; i < d; ++i) base += static_cast<std::size_t>(q.cell[i]) * strides_[static_cast<std::size_t>(i)];
  out.setZero();
  const unsigned corners = 1u << d;
  for (unsigned c = 0; c < corners; ++c) {
    double w = 1.0;
    std::size_t off = 0;
    for (int i = 0; i < d; ++i) {
      if (c & (1u << i)) {
        w *= q.frac[i];
        off += strides_[static_cast<std::size_t>(i)];
      } else {
        w *= 1.0 - q.frac[i];
      }
    }
    if (w == 0.0) continue;
    const double* g = &node_gradients_[(base + off) * static_cast<std::size_t>(d)];
    for (int j = 0; j < d; ++j) out[j] += w * g[j];
  }
}

Eigen::VectorXd GridField::gradient(const Eigen::Ref<const Eigen::VectorXd>& x, bool* clamped) const {
  Eigen::VectorXd g(dim());
  gradient(x, g, clamped);
  return g;
}

void GridField::compute_node_gradients(int workers) {
  const int d = dim();
  node_gradients_.assign(size() * static_cast<std::size_t>(d), 0.0);
  const int w = resolve_worker_count(workers);
  parallel_for(size(), w, [&](std::size_t begin, std::size_t end) {
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    // decode the starting multi-index once, then run an odometer
    std::size_t rem = begin;
    for (int i = 0; i < d; ++i) {
      idx[static_cast<std::size_t>(i)] = static_cast<int>(rem / strides_[static_cast<std::size_t>(i)]);
      rem %= strides_[static_cast<std::size_t>(i)];
    }
    for (std::size_t flat = begin; flat < end; ++flat) {
      double* g = &node_gradients_[flat * static_cast<std::size_t>(d)];
      for (int i = 0; i < d; ++i) {
        const AxisSpec& a = axes_[static_cast<std::size_t>(i)];
        const std::size_t s = strides_[static_cast<std::size_t>(i)];
        const int k = idx[static_cast<std::size_t>(i)];
        const double inv = 1.0 / a.spacing();
        if (k == 0) {
          g[i] = (values_[flat + s] - values_[flat]) * inv;
        } else if (k == a.n - 1) {
          g[i] = (values_[flat] - values_[flat - s]) * inv;
        } else {
          g[i] = (values_[flat + s] - values_[flat - s]) * (0.5 * inv);
        }
      }
      // odometer increment, last axis fastest
      for (int i = d - 1; i >= 0; --i) {
        int& k = idx[static_cast<std::size_t>(i)];
        if (++k < axes_[static_cast<std::size_t>(i)].n) break;
        k = 0;
      }
    }
  });
}

void GridField::for_each_node(
    const std::function<void(std::size_t, const std::vector<int>&, const Eigen::VectorXd&)>& fn) const {
  const int d = dim();
  std::vector<int> idx(static_cast<std::size_t>(d), 0);
  Eigen::VectorXd x(d);
  for (int i = 0; i < d; ++i) x[i] = axes_[static_cast<std::size_t>(i)].coord(0);
  const std::size_t total = size();
  for (std::size_t flat = 0; flat < total; ++flat) {
    fn(flat, idx, x);
    for (int i = d - 1; i >= 0; --i) {
      int& k = idx[static_cast<std::size_t>(i)];
      if (++k < axes_[static_cast<std::size_t>(i)].n) {
        x[i] = axes_[static_cast<std::size_t>(i)].coord(k);
        break;
      }
      k = 0;
      x[i] = axes_[static_cast<std::size_t>(i)].coord(0);
    }
  }
}

std::size_t GridField::flat_index(const std::vector<int>& idx) const {
  if (idx.size() != axes_.size()) throw std::invalid_argument("GridField: index dimension mismatch");
  std::size_t flat = 0;
  for (int i = 0; i < dim(); ++i) {
    const int k = idx[static_cast<std::size_t>(i)];
    if (k < 0 || k >= axes_[static_cast<std::size_t>(i)].n) throw std::out_of_range("GridField: node index out of range");
    flat += static_cast<std::size_t>(k) * strides_[static_cast<std::size_t>(i)];
  }
  return flat;
}

void GridField::node_coordinates(const std::vector<int>& idx, Eigen::VectorXd& x) const {
  x.resize(dim());
  for (int i = 0; i < dim(); ++i) x[i] = axes_[static_cast<std::size_t>(i)].coord(idx[static_cast<std::size_t>(i)]);
}

}  // namespace safety_horizon
