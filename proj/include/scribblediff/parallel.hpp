#pragma once

namespace scribblediff {

// Worker-count knob for the parallel loops (bank synthesis, batch gradients,
// feature extraction). Results are independent of the setting by construction:
// every parallel loop writes to disjoint slots and reductions run in index order.
int max_jobs();
void set_max_jobs(int jobs);  // 0 restores the hardware default

}  // namespace scribblediff
