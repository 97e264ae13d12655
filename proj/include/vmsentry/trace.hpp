// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "vmsentry/bytes.hpp"

#include <functional>

namespace vmsentry {

// Event sink shared by server, agents, and the simulator. The simulator
// collects these into the scenario trace; live processes log them.
using TraceSink = std::function<void(Tick tick, std::string_view actor, std::string_view kind,
                                     std::string_view detail)>;

inline TraceSink null_sink() {
    return [](Tick, std::string_view, std::string_view, std::string_view) {};
}

} // namespace vmsentry
