// Ball robot driven at an ellipse, with and without circulation. Writes
// example1_<variant>.csv next to the binary and prints a short summary.

#include <fstream>
#include <iostream>

#include "scalecbf/io.hpp"
#include "scalecbf/scenarios.hpp"

using namespace scalecbf;

int main() {
  for (bool circ : {false, true}) {
    const ScenarioConfig cfg = example1(circ);
    const RunResult r = run_scenario(cfg);
    const RunSummary& s = r.summary;

    std::ofstream csv(cfg.name + ".csv");
    write_log_csv(csv, r.log);

    const Eigen::VectorXd p = r.log.records.back().cfg;
    std::cout << cfg.name << "\n";
    std::cout << "  final position  (" << p(0) << ", " << p(1) << ")\n";
    std::cout << "  min h           " << s.min_h << "\n";
    std::cout << "  goal reached    " << (s.goal_reached ? "yes" : "no") << "\n";
    if (s.equilibrium.detected) {
      const Eigen::VectorXd& m = s.equilibrium.mean_cfg;
      std::cout << "  equilibrium     (" << m(0) << ", " << m(1) << ") from t = " << s.equilibrium.t0
                << ", case " << (s.equilibrium.equilibrium_case == 1 ? "i" : "ii") << "\n";
    } else {
      std::cout << "  equilibrium     none\n";
    }
    std::cout << "  QP time p50/p90 " << s.qp_time_p50_us << " / " << s.qp_time_p90_us << " us\n";
  }
  return 0;
}
