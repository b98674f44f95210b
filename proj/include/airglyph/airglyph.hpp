#pragma once

#include "airglyph/classify.hpp"
#include "airglyph/core_data.hpp"
#include "airglyph/errors.hpp"
#include "airglyph/evalharness.hpp"
#include "airglyph/llmbridge.hpp"
#include "airglyph/metricmap.hpp"
#include "airglyph/nnkit.hpp"
#include "airglyph/preprocess.hpp"
#include "airglyph/rng.hpp"
#include "airglyph/synthgen.hpp"
#include "airglyph/worddecode.hpp"
