#pragma once

// Umbrella header for the analysis engine (everything except the HTTP layer).

#include "bounds.hpp"
#include "error.hpp"
#include "forest.hpp"
#include "guidance.hpp"
#include "importance.hpp"
#include "json.hpp"
#include "random.hpp"
#include "space.hpp"
#include "suggest.hpp"
#include "validate.hpp"
