SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
DEFAULT_CARRIER = 10e9  # Hz
