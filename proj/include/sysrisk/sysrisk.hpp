#pragma once

#include "sysrisk/error.hpp"
#include "sysrisk/rng.hpp"
#include "sysrisk/special_functions.hpp"
#include "sysrisk/parallel.hpp"
#include "sysrisk/scenario.hpp"
#include "sysrisk/clearing.hpp"
#include "sysrisk/risk.hpp"
#include "sysrisk/setvalued.hpp"
#include "sysrisk/io.hpp"
#include "sysrisk/studies.hpp"
