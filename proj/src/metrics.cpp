#include "dsr/metrics.hpp"

#include <iomanip>

namespace dsr {

void write_eval_csv(std::ostream& os, const std::vector<EvalRow>& rows)
{
    os << "id,rmse,ssim,bad_pct\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        os << r.id << ',' << r.rmse << ',' << r.ssim << ',' << r.bad_pct << '\n';
    }
}

} // namespace dsr
