#include "bdc/kernels.hpp"

namespace bdc::kernels {

namespace {
thread_local Mode g_mode = Mode::parallel;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }

}  // namespace bdc::kernels
