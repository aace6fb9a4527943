#pragma once

#include "extremis/core.hpp"
#include "extremis/univariate.hpp"
#include "extremis/taildep.hpp"
#include "extremis/condex.hpp"
#include "extremis/mvnt.hpp"
#include "extremis/mgpd.hpp"
#include "extremis/simulate.hpp"
#include "extremis/validate.hpp"
