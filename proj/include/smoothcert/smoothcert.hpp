#pragma once

#include "smoothcert/certify.hpp"
#include "smoothcert/dataset.hpp"
#include "smoothcert/error.hpp"
#include "smoothcert/evaluate.hpp"
#include "smoothcert/external_oracle.hpp"
#include "smoothcert/oracle.hpp"
#include "smoothcert/partition.hpp"
#include "smoothcert/radius.hpp"
#include "smoothcert/report.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/statfun.hpp"
