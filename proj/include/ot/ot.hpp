#pragma once

// Umbrella header for the numerical library.

#include "ot/core.hpp"
#include "ot/divergences.hpp"
#include "ot/duality.hpp"
#include "ot/dynamics.hpp"
#include "ot/entropic.hpp"
#include "ot/exact.hpp"
#include "ot/gaussian.hpp"
#include "ot/measures.hpp"
#include "ot/semidiscrete.hpp"
#include "ot/w1.hpp"
