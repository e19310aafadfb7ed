#pragma once

// Umbrella header for the whole design compiler library.

#include "designc/bundle.hpp"
#include "designc/chain.hpp"
#include "designc/dimension.hpp"
#include "designc/expr.hpp"
#include "designc/graph.hpp"
#include "designc/network.hpp"
#include "designc/production.hpp"
#include "designc/rules.hpp"
#include "designc/schema.hpp"
