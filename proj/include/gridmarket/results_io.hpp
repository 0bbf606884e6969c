#pragma once

#include <filesystem>
#include <optional>

#include "gridmarket/envelope.hpp"
#include "gridmarket/market.hpp"
#include "gridmarket/scenario.hpp"

namespace gridmarket {

// Result bundle on disk (one directory per clearing):
//   prices_energy.csv       t,lambda                  cents/kWh
//   prices_limits.csv       t,component,beta          cents/(p.u.)^2 per step
//   prices_locational.csv   t,node,lambda_i           cents/kWh
//   injections.csv          t,prosumer,p_kw
//   voltages.csv            t,node,v_pu
//   incomes.csv             prosumer,energy_cents,limit_cents,total_cents
//   budget.csv              t,budget_cents
//   controls.csv            t,prosumer,dim,u_kw
//   soc.csv                 t,prosumer,dim,x_kwh      t = 0..T
//   limits_traded.csv       t,prosumer,component,l_value
//   shadow_prices.csv       t,node,xi_lower,xi_upper  (locational)
//   doe_duals.csv           t,prosumer,component,value (uniform mechanisms)
//   envelopes.csv           t,prosumer_id,component_index,w_value
//   meta.json               mechanism, status, welfare, fingerprint, units
// Every file carries an S_base comment header; deterministic row order.
void write_bundle(const std::filesystem::path& dir, const Scenario& scenario,
                  const FeederModel& feeder, const ProsumerFleet& fleet,
                  const ClearingResult& result, const EnvelopeAllocation* alloc);

void write_envelopes_csv(const std::filesystem::path& path, const Scenario& scenario,
                         const ProsumerFleet& fleet, const EnvelopeAllocation& alloc);

EnvelopeAllocation read_envelopes_csv(const std::filesystem::path& path,
                                      const FeederModel& feeder, const ProsumerFleet& fleet);

// Rebuilds a ClearingResult (internal units) from a bundle directory.
ClearingResult read_bundle(const std::filesystem::path& dir, const Scenario& scenario,
                           const FeederModel& feeder, const ProsumerFleet& fleet);

// Long-format plot data (price, voltage, income series) derived from bundles.
void write_plot_data(const std::filesystem::path& out_dir, const Scenario& scenario,
                     const FeederModel& feeder, const ProsumerFleet& fleet,
                     const std::vector<std::pair<std::string, ClearingResult>>& results);

}  // namespace gridmarket
