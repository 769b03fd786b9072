#pragma once

// Umbrella header for the from-scratch encoder-decoder generator.

#include "msqa/minigen/core.hpp"
#include "msqa/minigen/decode.hpp"
#include "msqa/minigen/model.hpp"
#include "msqa/minigen/params.hpp"
#include "msqa/minigen/train.hpp"
