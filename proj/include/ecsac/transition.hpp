#pragma once

#include <cstdint>
#include <vector>

namespace ecsac {

/// One environment step. episode_id / step_in_episode exist so trajectory
/// walks in episodic memory can prove they never cross an episode boundary.
struct Transition {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
    std::uint64_t episode_id = 0;
    std::uint64_t step_in_episode = 0;
};

} // namespace ecsac
