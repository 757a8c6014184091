#pragma once

// Umbrella header for the whole library.

#include "gfwa/attn_ref.hpp"
#include "gfwa/attn_tiled.hpp"
#include "gfwa/bench.hpp"
#include "gfwa/gate.hpp"
#include "gfwa/memory_sim.hpp"
#include "gfwa/model.hpp"
#include "gfwa/nsa.hpp"
#include "gfwa/numerics.hpp"
#include "gfwa/parallel.hpp"
#include "gfwa/verify.hpp"
