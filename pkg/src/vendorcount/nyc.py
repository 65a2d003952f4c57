"""Builtin New York City street-vendor survey tabulation.

Only citywide class totals and per-neighborhood combined totals were ever
published. The per-neighborhood food/merchandise credential splits below are
a reconstruction: each row is chosen so the ratio and subtotal estimators
return the reported neighborhood population and margin of error, and the
columns sum to the reported citywide counts. Treat neighborhood rows as
plausible inputs, not as the original microdata.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

from .core import DEFAULT_CAPS, UNKNOWN, CountTable, Partition, SurveyRecord

FOOD = "food"
MERCH = "merchandise-nonveteran"


@dataclass(frozen=True)
class Neighborhood:
    name: str
    borough: str
    food_respondents: int
    food_credentialed: int
    merch_respondents: int
    merch_credentialed: int

    @property
    def food_uncredentialed(self) -> int:
        return self.food_respondents - self.food_credentialed

    @property
    def merch_uncredentialed(self) -> int:
        return self.merch_respondents - self.merch_credentialed


NEIGHBORHOODS = (
    Neighborhood("Bronx Park and Fordham", "Bronx", 48, 1, 20, 11),
    Neighborhood("Southeast Bronx", "Bronx", 26, 4, 2, 0),
    Neighborhood("High Bridge and Morrisania", "Bronx", 15, 1, 5, 3),
    Neighborhood("Central Bronx", "Bronx", 6, 2, 3, 1),
    Neighborhood("Other Bronx", "Bronx", 15, 1, 16, 9),
    Neighborhood("Northwest Brooklyn", "Brooklyn", 41, 11, 5, 2),
    Neighborhood("Bushwick and Williamsburg", "Brooklyn", 27, 6, 14, 8),
    Neighborhood("Sunset Park", "Brooklyn", 23, 2, 3, 1),
    Neighborhood("Flatbush", "Brooklyn", 16, 2, 3, 1),
    Neighborhood("Borough Park", "Brooklyn", 9, 0, 1, 0),
    Neighborhood("Southwest Brooklyn", "Brooklyn", 4, 1, 2, 0),
    Neighborhood("Other Brooklyn", "Brooklyn", 25, 3, 3, 1),
    Neighborhood("Chelsea and Clinton", "Manhattan", 198, 81, 143, 91),
    Neighborhood("Lower Manhattan", "Manhattan", 81, 43, 24, 15),
    Neighborhood("Gramercy Park and Murray Hill", "Manhattan", 67, 25, 30, 18),
    Neighborhood("Lower East Side", "Manhattan", 53, 25, 12, 7),
    Neighborhood("Greenwich Village and Soho", "Manhattan", 47, 20, 14, 12),
    Neighborhood("Upper East Side", "Manhattan", 32, 10, 24, 18),
    Neighborhood("Central Harlem", "Manhattan", 30, 7, 16, 9),
    Neighborhood("Inwood and Washington Heights", "Manhattan", 31, 2, 2, 0),
    Neighborhood("Upper West Side", "Manhattan", 25, 12, 23, 15),
    Neighborhood("East Harlem", "Manhattan", 27, 3, 11, 6),
    Neighborhood("West Queens", "Queens", 300, 37, 96, 60),
    Neighborhood("North Queens", "Queens", 60, 12, 7, 6),
    Neighborhood("Northwest Queens", "Queens", 21, 3, 2, 0),
    Neighborhood("Jamaica", "Queens", 12, 1, 2, 1),
    Neighborhood("Other Queens", "Queens", 27, 0, 4, 2),
    Neighborhood("Staten Island", "Staten Island", 4, 2, 0, 0),
)

BOROUGHS = ("Bronx", "Brooklyn", "Manhattan", "Queens", "Staten Island")

# Respondents with no usable location: (uncredentialed, credentialed).
UNLOCATED = {FOOD: (98, 32), MERCH: (7, 11)}

# Respondents outside the two estimation classes.
VETERAN_MERCHANDISE = 54
FIRST_AMENDMENT = 101

# Reported (respondents, population, margin of error) per area, used only to
# check the reconstruction.
REPORTED = {
    "Bronx Park and Fordham": (68, 757, 239),
    "Southeast Bronx": (28, 385, 160),
    "High Bridge and Morrisania": (20, 233, 127),
    "Central Bronx": (9, 96, 81),
    "Other Bronx": (31, 264, 137),
    "Northwest Brooklyn": (46, 613, 204),
    "Bushwick and Williamsburg": (41, 433, 175),
    "Sunset Park": (26, 344, 153),
    "Flatbush": (19, 242, 128),
    "Borough Park": (10, 134, 94),
    "Southwest Brooklyn": (6, 64, 66),
    "Other Brooklyn": (28, 374, 159),
    "Chelsea and Clinton": (341, 3289, 490),
    "Lower Manhattan": (105, 1250, 287),
    "Gramercy Park and Murray Hill": (97, 1062, 274),
    "Lower East Side": (65, 808, 232),
    "Greenwich Village and Soho": (61, 726, 222),
    "Upper East Side": (56, 534, 194),
    "Central Harlem": (46, 483, 185),
    "Inwood and Washington Heights": (33, 459, 176),
    "Upper West Side": (48, 429, 172),
    "East Harlem": (38, 425, 174),
    "West Queens": (396, 4650, 692),
    "North Queens": (67, 896, 251),
    "Northwest Queens": (23, 312, 144),
    "Jamaica": (14, 181, 110),
    "Other Queens": (31, 406, 168),
    "Staten Island": (4, 58, 58),
    "Bronx": (156, 1735, 376),
    "Brooklyn": (176, 2205, 418),
    "Manhattan": (890, 9464, 879),
    "Queens": (531, 6445, 860),
    "New York City": (1905, 21857, 1941),
}

# Weighted citywide counts (uncredentialed, credentialed) under alternative
# response-probability scenarios. The food entry of "enforcement-inverse" is
# the only directly reported pair; every other entry is an illustrative
# input chosen to give the reported percentage change for that class.
WEIGHTING_SCENARIOS = {
    "enforcement-inverse": {FOOD: (25.7, 5.24), MERCH: (7.8718, 10.0)},
    "enforcement-proportional": {FOOD: (1076.2, 400.0), MERCH: (4.9205, 10.0)},
    "workforce-inverse": {FOOD: (1300.6, 300.0), MERCH: (11.8068, 10.0)},
    "workforce-proportional": {FOOD: (983.8, 350.0), MERCH: (5.5763, 10.0)},
}


def partition() -> Partition:
    return Partition(tuple(n.name for n in NEIGHBORHOODS))


def boroughs() -> dict[str, str]:
    """Neighborhood name -> borough."""
    return {n.name: n.borough for n in NEIGHBORHOODS}


def layout_rows() -> list[tuple[str, str, str]]:
    """``(cell, subregion, borough)`` rows; each neighborhood is its own cell."""
    return [(n.name, n.name, n.borough) for n in NEIGHBORHOODS]


def count_table(vendor_class: str) -> CountTable:
    food = vendor_class == FOOD
    n0 = {}
    n1 = {}
    for n in NEIGHBORHOODS:
        n0[n.name] = n.food_uncredentialed if food else n.merch_uncredentialed
        n1[n.name] = n.food_credentialed if food else n.merch_credentialed
    n0[UNKNOWN], n1[UNKNOWN] = UNLOCATED[vendor_class]
    return CountTable.from_mapping(vendor_class, partition(), n0, n1, DEFAULT_CAPS[vendor_class])


def records() -> Iterator[SurveyRecord]:
    """One record per respondent, in a fixed order.

    Veteran and first-amendment respondents are spread over the neighborhoods
    in turn; they never enter the estimates.
    """
    serial = 0

    def make(vendor_class: str, credential: bool, cell: str, veteran: bool = False) -> SurveyRecord:
        nonlocal serial
        serial += 1
        return SurveyRecord(f"r{serial:04d}", vendor_class, credential, veteran, cell)

    rows = [(n.name, n.food_uncredentialed, n.food_credentialed,
             n.merch_uncredentialed, n.merch_credentialed) for n in NEIGHBORHOODS]
    rows.append((UNKNOWN, *UNLOCATED[FOOD], *UNLOCATED[MERCH]))
    for cell, f0, f1, m0, m1 in rows:
        for _ in range(f0):
            yield make("food", False, cell)
        for _ in range(f1):
            yield make("food", True, cell)
        for _ in range(m0):
            yield make("merchandise", False, cell)
        for _ in range(m1):
            yield make("merchandise", True, cell)
    names = [n.name for n in NEIGHBORHOODS]
    for i in range(VETERAN_MERCHANDISE):
        yield make("merchandise", True, names[i % len(names)], veteran=True)
    for i in range(FIRST_AMENDMENT):
        yield make("first_amendment", False, names[i % len(names)])


def scenario_weights(name: str, vendor_class: str) -> dict[tuple[str, int], tuple[float, float]]:
    """Per-(cell, status) deterministic weights that sum to a scenario's weighted counts.

    Every respondent of a given status gets the same weight, so the weighted
    citywide counts equal the scenario entry exactly.
    """
    n0w, n1w = WEIGHTING_SCENARIOS[name][vendor_class]
    n0, n1 = count_table(vendor_class).n0_total, count_table(vendor_class).n1_total
    w0, w1 = n0w / n0, n1w / n1
    out = {}
    for cell in partition().all_cells:
        out[(cell, 0)] = (w0, w0 * w0)
        out[(cell, 1)] = (w1, w1 * w1)
    return out
