#include "oracles.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "permfl/models.hpp"

namespace oracle {

permfl::Federation QuadraticInstance::federation() const {
  permfl::Federation fed;
  fed.topology.teams = teams;
  fed.devices.resize(centers.size());
  for (std::size_t d = 0; d < centers.size(); ++d) {
    permfl::QuadraticSpec s;
    s.center = Eigen::Map<const Eigen::VectorXd>(centers[d].data(), dim);
    s.curvature = curvatures[d];
    fed.devices[d].id = static_cast<int>(d);
    fed.devices[d].model = std::make_shared<permfl::QuadraticModel>(s);
  }
  return fed;
}

QuadraticInstance make_quadratic(int dim, int teams, int per_team, std::uint64_t seed, double curv_lo,
                                 double curv_hi) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> coord(-5.0, 5.0), curv(curv_lo, curv_hi);
  QuadraticInstance q;
  q.dim = dim;
  int id = 0;
  for (int i = 0; i < teams; ++i) {
    q.teams.emplace_back();
    for (int j = 0; j < per_team; ++j) {
      q.teams.back().push_back(id++);
      Vec c(static_cast<std::size_t>(dim));
      for (auto& v : c) v = coord(gen);
      q.centers.push_back(c);
      q.curvatures.push_back(curv_hi > curv_lo ? curv(gen) : curv_lo);
    }
  }
  return q;
}

Vec joint_quadratic_minimizer(const QuadraticInstance& q, double lambda, double gamma) {
  // The objective separates over coordinates; unknowns per coordinate are
  // th_0..th_{n-1}, w_0..w_{M-1}, x. Stationarity gives H u = rhs.
  const int n = static_cast<int>(q.centers.size());
  const int m = static_cast<int>(q.teams.size());
  const int size = n + m + 1;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(size, size);
  for (int i = 0; i < m; ++i) {
    const double team_w = 1.0 / m;
    const double dev_w = team_w / static_cast<double>(q.teams[i].size());
    const int wi = n + i;
    for (int d : q.teams[i]) {
      // dev_w * (a/2 (th - c)^2 + lambda/2 (th - w)^2)
      H(d, d) += dev_w * (q.curvatures[d] + lambda);
      H(d, wi) -= dev_w * lambda;
      H(wi, d) -= dev_w * lambda;
      H(wi, wi) += dev_w * lambda;
    }
    // team_w * gamma/2 (w - x)^2
    H(wi, wi) += team_w * gamma;
    H(wi, n + m) -= team_w * gamma;
    H(n + m, wi) -= team_w * gamma;
    H(n + m, n + m) += team_w * gamma;
  }
  const auto solver = H.fullPivLu();
  Vec x(static_cast<std::size_t>(q.dim));
  for (int k = 0; k < q.dim; ++k) {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(size);
    for (int i = 0; i < m; ++i)
      for (int d : q.teams[i])
        rhs(d) = q.curvatures[d] * q.centers[d][k] / (m * static_cast<double>(q.teams[i].size()));
    x[k] = solver.solve(rhs)(n + m);
  }
  return x;
}

std::vector<Vec> naive_permfl_quadratic(const QuadraticInstance& q, const Vec& x0, double alpha, double eta,
                                        double beta, double lambda, double gamma, int T, int K, int L) {
  const std::size_t d = static_cast<std::size_t>(q.dim);
  Vec x = x0;
  std::vector<Vec> history{x};
  std::vector<Vec> theta(q.centers.size(), Vec(d));
  for (int t = 0; t < T; ++t) {
    std::vector<Vec> w(q.teams.size(), x);
    for (std::size_t i = 0; i < q.teams.size(); ++i) {
      for (int k = 0; k < K; ++k) {
        Vec theta_bar(d, 0.0);
        for (int dev : q.teams[i]) {
          Vec th = w[i];
          for (int l = 0; l < L; ++l)
            for (std::size_t c = 0; c < d; ++c) {
              const double g = q.curvatures[dev] * (th[c] - q.centers[dev][c]);
              th[c] = th[c] - alpha * g - alpha * lambda * (th[c] - w[i][c]);
            }
          theta[dev] = th;
          for (std::size_t c = 0; c < d; ++c) theta_bar[c] += th[c] / static_cast<double>(q.teams[i].size());
        }
        for (std::size_t c = 0; c < d; ++c)
          w[i][c] = w[i][c] - eta * (lambda * (w[i][c] - theta_bar[c]) + gamma * (w[i][c] - x[c]));
      }
    }
    Vec w_bar(d, 0.0);
    for (const auto& wi : w)
      for (std::size_t c = 0; c < d; ++c) w_bar[c] += wi[c] / static_cast<double>(w.size());
    for (std::size_t c = 0; c < d; ++c) x[c] = x[c] - beta * gamma * (x[c] - w_bar[c]);
    history.push_back(x);
  }
  return history;
}

Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec p = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = x[i] + h;
    const double up = f(p);
    p[i] = x[i] - h;
    const double down = f(p);
    p[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double naive_mclr_loss(const Vec& theta, const std::vector<Vec>& rows, const std::vector<int>& labels,
                       int n_classes, double l2) {
  const std::size_t f = rows.front().size();
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    Vec z(static_cast<std::size_t>(n_classes));
    for (int k = 0; k < n_classes; ++k) {
      const std::size_t base = static_cast<std::size_t>(k) * (f + 1);
      double s = theta[base + f];
      for (std::size_t j = 0; j < f; ++j) s += theta[base + j] * rows[r][j];
      z[static_cast<std::size_t>(k)] = s;
    }
    double mx = z[0];
    for (double v : z) mx = std::max(mx, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - mx);
    total += mx + std::log(sum) - z[static_cast<std::size_t>(labels[r])];
  }
  double sq = 0.0;
  for (double v : theta) sq += v * v;
  return total / static_cast<double>(rows.size()) + 0.5 * l2 * sq;
}

double dist(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

Vec to_vec(const permfl::ParamVector& v) { return Vec(v.data(), v.data() + v.size()); }

}  // namespace oracle
