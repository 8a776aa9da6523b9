# Tests package for Rental Genie
