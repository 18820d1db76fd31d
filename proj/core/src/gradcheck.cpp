#include "sfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "sfn/graph.hpp"

namespace sfn {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const Tensor out = f();
  return out.item();
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves,
                           const GradCheckOptions& options) {
  for (const auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check: every leaf must require grad");
  }
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw ContractError("grad_check: function is not deterministic across two forward passes");
  }

  std::vector<Tensor> work = leaves;
  for (auto& leaf : work) leaf.zero_grad();
  {
    Graph graph;
    GraphScope scope(graph);
    const Tensor loss = f();
    graph.backward(loss);
  }

  GradCheckReport report;
  report.passed = true;
  for (std::size_t l = 0; l < work.size(); ++l) {
    const std::vector<double> analytic = work[l].grad();
    auto values = work[l].data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = evaluate(f);
      values[i] = saved - options.step;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom =
          std::max({std::abs(analytic[i]), std::abs(numeric), options.magnitude_floor});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++report.coordinates;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = std::isnan(rel) ? INFINITY : rel;
        std::ostringstream msg;
        msg << "leaf[" << l << "] coord " << i << ": analytic " << analytic[i] << " vs numeric "
            << numeric;
        report.worst = msg.str();
      }
    }
  }
  report.passed = report.max_rel_error <= options.tolerance;
  return report;
}

}  // namespace sfn
