#include "localsa/apps.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "localsa/error.hpp"
#include "localsa/text.hpp"

namespace localsa {

std::string to_string(ChainFamily family) {
  return family == ChainFamily::TwoStep ? "two_step" : "random";
}

ChainFamily parse_chain_family(const std::string& text) {
  if (text == "random") return ChainFamily::RandomErgodic;
  if (text == "two_step") return ChainFamily::TwoStep;
  throw Error(ErrorKind::Config, "chain_family must be 'random' or 'two_step', got '" + text + "'");
}

namespace {

Matrix random_orthogonal(Eigen::Index d, RandomStream& rng) {
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(d, d);
}

Vector random_unit(Eigen::Index d, RandomStream& rng) {
  Vector v(d);
  double norm = 0.0;
  while (norm < 1e-8) {
    for (Eigen::Index j = 0; j < d; ++j) v(j) = rng.normal();
    norm = v.norm();
  }
  return v / norm;
}

double spectral_norm(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace

// Quadratic federation --------------------------------------------------

Federation make_quadratic_federation(const QuadraticOptions& o) {
  if (o.N == 0 || o.d == 0 || o.n_states == 0) {
    throw Error(ErrorKind::InvalidArgument, "N, d and n_states must be positive");
  }
  if (!(o.mu_target > 0.0) || !(o.mu_target <= o.L_target)) {
    throw Error(ErrorKind::InvalidArgument, "need 0 < mu_target <= L_target");
  }
  if (!(o.heterogeneity >= 0.0) || !(o.q_perturbation >= 0.0 && o.q_perturbation < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "heterogeneity >= 0 and q_perturbation in [0,1) required");
  }
  RandomStream rng(derive_seed(o.seed, 0x9a11));
  const auto d = static_cast<Eigen::Index>(o.d);
  const Vector shared = o.c_scale * random_unit(d, rng);

  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
  for (std::size_t i = 0; i < o.N; ++i) {
    RandomStream agent_rng(derive_seed(o.seed, i));
    MarkovChain chain = (o.chain_family == ChainFamily::TwoStep && o.n_states >= 3)
                            ? two_step_mixing_chain(o.n_states, agent_rng)
                            : random_ergodic_chain(o.n_states, o.smoothing, agent_rng);
    const Vector pi = stationary_distribution(chain).pi;

    Vector eig(d);
    for (Eigen::Index j = 0; j < d; ++j) eig(j) = agent_rng.uniform(o.mu_target, o.L_target);
    const Matrix basis = random_orthogonal(d, agent_rng);
    const Matrix q_mean = basis * eig.asDiagonal() * basis.transpose();
    const double floor = eig.minCoeff();

    std::vector<Matrix> q(o.n_states);
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      std::vector<Matrix> spread(o.n_states);
      Matrix centre = Matrix::Zero(d, d);
      for (std::size_t x = 0; x < o.n_states; ++x) {
        Matrix g(d, d);
        for (Eigen::Index r = 0; r < d; ++r) {
          for (Eigen::Index c = 0; c < d; ++c) g(r, c) = agent_rng.normal();
        }
        spread[x] = 0.5 * (g + g.transpose());
        centre += pi(static_cast<Eigen::Index>(x)) * spread[x];
      }
      double worst = 0.0;
      for (auto& s : spread) {
        s -= centre;
        worst = std::max(worst, spectral_norm(s));
      }
      const double scale = worst > 0.0 ? o.q_perturbation * floor / worst : 0.0;
      ok = true;
      for (std::size_t x = 0; x < o.n_states; ++x) {
        q[x] = q_mean + scale * spread[x];
        q[x] = 0.5 * (q[x] + q[x].transpose());
        Eigen::SelfAdjointEigenSolver<Matrix> es(q[x], Eigen::EigenvaluesOnly);
        if (es.eigenvalues().minCoeff() < 0.0) ok = false;
      }
    }
    if (!ok) throw Error(ErrorKind::GenerationFailed, "could not keep per-state matrices PSD in 100 retries");

    const Vector c_mean = shared + o.heterogeneity * random_unit(d, agent_rng);
    std::vector<Vector> noise(o.n_states);
    Vector noise_centre = Vector::Zero(d);
    for (std::size_t x = 0; x < o.n_states; ++x) {
      noise[x] = Vector(d);
      for (Eigen::Index j = 0; j < d; ++j) noise[x](j) = o.c_noise * agent_rng.normal();
      noise_centre += pi(static_cast<Eigen::Index>(x)) * noise[x];
    }
    std::vector<Matrix> a(o.n_states);
    std::vector<Vector> b(o.n_states);
    for (std::size_t x = 0; x < o.n_states; ++x) {
      a[x] = -q[x];
      b[x] = c_mean + noise[x] - noise_centre;
    }
    ops.push_back(OperatorSpec::linear(std::move(a), std::move(b)));
    chains.push_back(std::move(chain));
  }
  return build_federation(std::move(ops), std::move(chains));
}

// MDPs -------------------------------------------------------------------

void MDP::validate() const {
  if (S == 0 || A == 0) throw Error(ErrorKind::InvalidArgument, "MDP needs S, A >= 1");
  if (P.size() != S * A * S || R.rows() != static_cast<Eigen::Index>(S) ||
      R.cols() != static_cast<Eigen::Index>(A)) {
    throw Error(ErrorKind::DimensionMismatch, "MDP tensor shapes do not match S and A");
  }
  // gamma = 0 is allowed: the Q recursion then reduces to a linear solve.
  if (!(gamma >= 0.0 && gamma < 1.0)) throw Error(ErrorKind::InvalidArgument, "gamma must lie in [0,1)");
  for (std::size_t sa = 0; sa < S * A; ++sa) {
    double sum = 0.0;
    for (std::size_t s2 = 0; s2 < S; ++s2) {
      const double v = P[sa * S + s2];
      if (!(v >= 0.0 && v <= 1.0)) throw Error(ErrorKind::InvalidArgument, "MDP transition outside [0,1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw Error(ErrorKind::InvalidArgument, "MDP transition row " + std::to_string(sa) + " sums to " +
                                                  format_double(sum));
    }
  }
  if (R.cwiseAbs().maxCoeff() > R_max) throw Error(ErrorKind::InvalidArgument, "reward exceeds R_max");
}

Policy Policy::uniform(std::size_t S, std::size_t A) {
  return {Matrix::Constant(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A),
                           1.0 / static_cast<double>(A))};
}

void Policy::validate(const MDP& mdp, bool require_positive) const {
  if (probs.rows() != static_cast<Eigen::Index>(mdp.S) || probs.cols() != static_cast<Eigen::Index>(mdp.A)) {
    throw Error(ErrorKind::DimensionMismatch, "policy shape does not match the MDP");
  }
  for (Eigen::Index s = 0; s < probs.rows(); ++s) {
    if (std::abs(probs.row(s).sum() - 1.0) > 1e-12 || probs.row(s).minCoeff() < 0.0) {
      throw Error(ErrorKind::InvalidArgument, "policy row " + std::to_string(s) + " is not a distribution");
    }
    if (require_positive && probs.row(s).minCoeff() <= 0.0) {
      throw Error(ErrorKind::InvalidArgument, "behavior policy must give every action positive mass");
    }
  }
}

MDP make_random_mdp(std::size_t S, std::size_t A, double gamma, double R_max, double smoothing,
                    std::uint64_t seed) {
  if (S == 0 || A == 0) throw Error(ErrorKind::InvalidArgument, "MDP needs S, A >= 1");
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw Error(ErrorKind::InvalidArgument, "smoothing must lie in [0,1)");
  RandomStream rng(seed);
  MDP mdp;
  mdp.S = S;
  mdp.A = A;
  mdp.gamma = gamma;
  mdp.R_max = R_max;
  mdp.P.assign(S * A * S, 0.0);
  for (std::size_t sa = 0; sa < S * A; ++sa) {
    double total = 0.0;
    std::vector<double> row(S);
    for (auto& v : row) total += (v = rng.exponential());
    for (std::size_t s2 = 0; s2 < S; ++s2) {
      mdp.P[sa * S + s2] = (1.0 - smoothing) * row[s2] / total + smoothing / static_cast<double>(S);
    }
    double sum = 0.0;
    std::size_t arg = 0;
    for (std::size_t s2 = 0; s2 < S; ++s2) {
      sum += mdp.P[sa * S + s2];
      if (mdp.P[sa * S + s2] > mdp.P[sa * S + arg]) arg = s2;
    }
    mdp.P[sa * S + arg] += 1.0 - sum;
  }
  mdp.R = Matrix(static_cast<Eigen::Index>(S), static_cast<Eigen::Index>(A));
  for (Eigen::Index s = 0; s < mdp.R.rows(); ++s) {
    for (Eigen::Index a = 0; a < mdp.R.cols(); ++a) {
      mdp.R(s, a) = std::clamp(rng.uniform(-R_max, R_max), -R_max, R_max);
    }
  }
  mdp.validate();
  return mdp;
}

TripleChain induced_chain(const MDP& mdp, const Policy& policy) {
  mdp.validate();
  policy.validate(mdp, false);
  std::vector<Triple> triples;
  std::vector<long> index(mdp.S * mdp.A * mdp.S, -1);
  for (std::size_t s = 0; s < mdp.S; ++s) {
    for (std::size_t a = 0; a < mdp.A; ++a) {
      for (std::size_t s2 = 0; s2 < mdp.S; ++s2) {
        if (policy.probs(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) * mdp.p(s, a, s2) > 0.0) {
          index[(s * mdp.A + a) * mdp.S + s2] = static_cast<long>(triples.size());
          triples.push_back({s, a, s2});
        }
      }
    }
  }
  const auto n = static_cast<Eigen::Index>(triples.size());
  Matrix p = Matrix::Zero(n, n);
  for (Eigen::Index from = 0; from < n; ++from) {
    const std::size_t s1 = triples[static_cast<std::size_t>(from)][2];
    for (std::size_t a = 0; a < mdp.A; ++a) {
      const double pa = policy.probs(static_cast<Eigen::Index>(s1), static_cast<Eigen::Index>(a));
      for (std::size_t s2 = 0; s2 < mdp.S; ++s2) {
        const double w = pa * mdp.p(s1, a, s2);
        if (w > 0.0) p(from, index[(s1 * mdp.A + a) * mdp.S + s2]) += w;
      }
    }
  }
  for (Eigen::Index r = 0; r < n; ++r) {
    Eigen::Index arg = 0;
    p.row(r).maxCoeff(&arg);
    p(r, arg) += 1.0 - p.row(r).sum();
  }
  std::vector<std::string> labels;
  labels.reserve(triples.size());
  for (const auto& t : triples) {
    labels.push_back(std::to_string(t[0]) + "," + std::to_string(t[1]) + "," + std::to_string(t[2]));
  }
  MarkovChain chain(std::move(p), std::move(labels), true);
  if (!chain.ergodic()) {
    throw Error(ErrorKind::NonErgodic, "induced triple chain: " + chain.certificate().reason);
  }
  return {std::move(chain), std::move(triples)};
}

// Features ---------------------------------------------------------------

FeatureCheck validate_features(const FeatureMap& f) {
  FeatureCheck check;
  if (f.phi.size() == 0) return check;
  Eigen::ColPivHouseholderQR<Matrix> qr(f.phi);
  qr.setThreshold(1e-10);
  check.rank = static_cast<std::size_t>(qr.rank());
  check.full_rank = check.rank == static_cast<std::size_t>(f.phi.cols());
  check.max_row_norm = f.phi.rowwise().norm().maxCoeff();
  check.norms_ok = check.max_row_norm <= 1.0 + 1e-12;
  return check;
}

FeatureMap make_features(std::size_t rows, std::size_t L, RandomStream& rng,
                         const std::vector<bool>& active, std::size_t n_actions) {
  if (L == 0 || L > rows) throw Error(ErrorKind::InvalidArgument, "need 1 <= L <= rows for full column rank");
  if (!active.empty() && active.size() != rows) throw Error(ErrorKind::DimensionMismatch, "active mask length");
  const auto r = static_cast<Eigen::Index>(rows);
  const auto l = static_cast<Eigen::Index>(L);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Matrix g = Matrix::Zero(r, l);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (!active.empty() && !active[static_cast<std::size_t>(i)]) continue;
      for (Eigen::Index j = 0; j < l; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(r, l);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (!active.empty() && !active[static_cast<std::size_t>(i)]) q.row(i).setZero();
    }
    const double max_norm = q.rowwise().norm().maxCoeff();
    if (!(max_norm > 0.0)) continue;
    FeatureMap f{q / max_norm, n_actions};
    if (validate_features(f).pass()) return f;
  }
  throw Error(ErrorKind::GenerationFailed, "could not generate full-rank features");
}

FeatureMap tabular_features(std::size_t S, std::size_t A) {
  const auto n = static_cast<Eigen::Index>(S * A);
  return {Matrix::Identity(n, n), A};
}

// Operators --------------------------------------------------------------

AppAgent td0_operator(const MDP& mdp, const Policy& policy, const FeatureMap& features) {
  if (features.phi.rows() != static_cast<Eigen::Index>(mdp.S) || features.n_actions != 0) {
    throw Error(ErrorKind::DimensionMismatch, "TD features need one row per state");
  }
  auto tc = induced_chain(mdp, policy);
  std::vector<Matrix> a;
  std::vector<Vector> b;
  for (const auto& [s, act, s2] : tc.triples) {
    const Vector phi = features.phi.row(static_cast<Eigen::Index>(s)).transpose();
    const Vector phi_next = features.phi.row(static_cast<Eigen::Index>(s2)).transpose();
    a.push_back(phi * (mdp.gamma * phi_next - phi).transpose());
    b.push_back(mdp.R(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(act)) * phi);
  }
  return {OperatorSpec::linear(std::move(a), std::move(b)), std::move(tc.chain), std::move(tc.triples)};
}

namespace {

struct QData {
  Matrix phi;  // (S * A) x L
  std::size_t A = 0;
  double gamma = 0.0;
  std::vector<Triple> triples;
  std::vector<double> reward;  // per triple
};

}  // namespace

AppAgent q_learning_operator(const MDP& mdp, const Policy& behavior, const FeatureMap& features) {
  if (features.phi.rows() != static_cast<Eigen::Index>(mdp.S * mdp.A)) {
    throw Error(ErrorKind::DimensionMismatch, "Q features need one row per (state, action)");
  }
  behavior.validate(mdp, true);
  auto tc = induced_chain(mdp, behavior);
  auto data = std::make_shared<QData>();
  data->phi = features.phi;
  data->A = mdp.A;
  data->gamma = mdp.gamma;
  data->triples = tc.triples;
  double lip = 0.0;
  const Vector row_norm = features.phi.rowwise().norm();
  for (const auto& [s, a, s2] : tc.triples) {
    data->reward.push_back(mdp.R(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)));
    const double cur = row_norm(static_cast<Eigen::Index>(s * mdp.A + a));
    double next = 0.0;
    for (std::size_t a2 = 0; a2 < mdp.A; ++a2) next = std::max(next, row_norm(static_cast<Eigen::Index>(s2 * mdp.A + a2)));
    lip = std::max(lip, cur * (mdp.gamma * next + cur));
  }
  const std::size_t dim = features.dim();
  auto fn = [data, dim](const double* theta, std::size_t x, double* out) {
    const auto& [s, a, s2] = data->triples[x];
    const auto L = static_cast<Eigen::Index>(dim);
    const Eigen::Map<const Vector> th(theta, L);
    double best = 0.0;
    for (std::size_t a2 = 0; a2 < data->A; ++a2) {
      const double v = data->phi.row(static_cast<Eigen::Index>(s2 * data->A + a2)).dot(th);
      if (a2 == 0 || v > best) best = v;  // strict: ties keep the lowest action
    }
    const auto row = static_cast<Eigen::Index>(s * data->A + a);
    const double td = data->reward[x] + data->gamma * best - data->phi.row(row).dot(th);
    for (Eigen::Index j = 0; j < L; ++j) out[j] = -data->phi(row, j) * td;
  };
  return {OperatorSpec::nonlinear(dim, tc.triples.size(), fn, lip), std::move(tc.chain), std::move(tc.triples)};
}

Federation make_app_federation(std::vector<AppAgent> agents, const FederationOptions& options) {
  std::vector<OperatorSpec> ops;
  std::vector<MarkovChain> chains;
  for (auto& agent : agents) {
    ops.push_back(std::move(agent.op));
    chains.push_back(std::move(agent.chain));
  }
  return build_federation(std::move(ops), std::move(chains), options);
}

Vector td_fixed_point(const Federation& fed) {
  const auto d = static_cast<Eigen::Index>(fed.dim());
  Matrix a_sum = Matrix::Zero(d, d);
  Vector b_sum = Vector::Zero(d);
  for (std::size_t i = 0; i < fed.N(); ++i) {
    if (!fed.ops[i].is_linear()) throw Error(ErrorKind::InvalidArgument, "td_fixed_point needs linear operators");
    const auto mean = linear_mean(fed.ops[i], fed.pis[i]);
    a_sum += mean.a_mean;
    b_sum += mean.b_mean;
  }
  Eigen::FullPivLU<Matrix> lu(a_sum);
  if (lu.rank() < d) throw Error(ErrorKind::SingularSystem, "summed TD mean matrix is singular");
  const Vector theta = lu.solve(-b_sum);
  const double residual = (a_sum * theta + b_sum).norm();
  if (!(residual <= 1e-10 * std::max(1.0, b_sum.norm()))) {
    throw Error(ErrorKind::SingularSystem, "TD fixed-point residual " + format_double(residual));
  }
  return theta;
}

Vector q_fixed_point_oracle(const Federation& fed) {
  if (!(fed.constants.mu > 0.0)) {
    throw Error(ErrorKind::AssumptionFailed,
                "federation fails the monotonicity gate (mu_hat = " + format_double(fed.constants.mu) + ")");
  }
  return solve_root(fed);
}

}  // namespace localsa
