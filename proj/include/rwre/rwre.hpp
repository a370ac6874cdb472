#pragma once

#include "rwre/error.hpp"
#include "rwre/rng.hpp"
#include "rwre/geometry.hpp"
#include "rwre/env.hpp"
#include "rwre/lattice.hpp"
#include "rwre/solvers.hpp"
#include "rwre/green.hpp"
#include "rwre/spectral.hpp"
#include "rwre/walker.hpp"
#include "rwre/dipole.hpp"
#include "rwre/graphs.hpp"
