#include "esam3/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esam3/error.hpp"

namespace esam3::num {

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    fail(ErrorKind::kInvalidArgument, "grad_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
  }
}

double probe(const std::function<double()>& eval) {
  double v;
  try {
    v = eval();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kNumerical) fail(ErrorKind::kNumerical, std::string("grad_check probe: ") + e.what());
    throw;
  }
  if (!std::isfinite(v)) fail(ErrorKind::kNumerical, "grad_check probe: non-finite function value");
  return v;
}

void update(GradCheckResult& r, double analytic, double central, std::size_t index) {
  const double err = std::abs(analytic - central) / std::max(1.0, std::abs(central));
  if (err > r.max_error) {
    r.max_error = err;
    r.worst_index = index;
  }
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps, double tol) {
  check_eps(eps);
  Tape tape;
  Var xv = tape.input(x);
  Var y = f(tape, xv);
  tape.backward(y);
  const Tensor analytic = tape.grad(xv);

  auto eval_at = [&](const Tensor& point) {
    return probe([&] {
      Tape t;
      return f(t, t.constant(point)).item();
    });
  };

  GradCheckResult r;
  Tensor shifted = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    shifted[i] = x[i] + eps;
    const double up = eval_at(shifted);
    shifted[i] = x[i] - eps;
    const double down = eval_at(shifted);
    shifted[i] = x[i];
    update(r, analytic[i], (up - down) / (2.0 * eps), i);
  }
  r.ok = r.max_error <= tol;
  return r;
}

GradCheckResult grad_check_params(const std::function<Var(Tape&)>& build, const std::vector<Tensor*>& params,
                                  double eps, double tol, std::size_t coords_per_tensor, std::uint64_t seed) {
  check_eps(eps);
  for (auto* p : params) p->clear_grad();
  {
    Tape tape;
    Var y = build(tape);
    tape.backward(y);
  }
  auto eval = [&] {
    return probe([&] {
      Tape t;
      return build(t).item();
    });
  };

  Rng rng(seed);
  GradCheckResult r;
  std::size_t flat = 0;
  for (auto* p : params) {
    const std::vector<double> analytic = p->has_grad() ? p->grad() : std::vector<double>(p->numel(), 0.0);
    std::vector<std::size_t> coords;
    if (coords_per_tensor == 0 || coords_per_tensor >= p->numel()) {
      for (std::size_t i = 0; i < p->numel(); ++i) coords.push_back(i);
    } else {
      for (std::size_t c = 0; c < coords_per_tensor; ++c) coords.push_back(rng.below(p->numel()));
    }
    for (auto i : coords) {
      const double orig = (*p)[i];
      (*p)[i] = orig + eps;
      const double up = eval();
      (*p)[i] = orig - eps;
      const double down = eval();
      (*p)[i] = orig;
      update(r, analytic[i], (up - down) / (2.0 * eps), flat + i);
    }
    flat += p->numel();
    p->clear_grad();
  }
  r.ok = r.max_error <= tol;
  return r;
}

}  // namespace esam3::num
