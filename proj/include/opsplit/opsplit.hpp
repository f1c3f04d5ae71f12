#pragma once

#include "opsplit/errors.hpp"
#include "opsplit/operator_core.hpp"
#include "opsplit/flow_engine.hpp"
#include "opsplit/first_order_flows.hpp"
#include "opsplit/second_order_flows.hpp"
#include "opsplit/nonconvex_flows.hpp"
#include "opsplit/primal_dual_flows.hpp"
#include "opsplit/discrete_algorithms.hpp"
#include "opsplit/diagnostics.hpp"
#include "opsplit/problems.hpp"
#include "opsplit/experiment.hpp"
