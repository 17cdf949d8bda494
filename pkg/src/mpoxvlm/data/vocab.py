"""Controlled vocabularies for clinical attributes.

Integer codes follow the dataset's published coding tables. Mpox itself is not
listed among the comparator diagnoses (codes 0-86), so it is assigned the next
free code.
"""

FITZPATRICK = {
    0: "Unknown",
    1: "Always burns, never tans (palest; freckles)",
    2: "Usually burns, tans minimally (light colored but darker than fair)",
    3: "Sometimes mild burn, tans uniformly (golden honey or olive)",
    4: "Burns minimally, always tans well (moderate brown)",
    5: "Very rarely burns, tans very easily (dark brown)",
    6: "Never burns (deeply pigmented dark brown to darkest brown)",
}

BODY_PARTS = {
    0: "Unknown",
    1: "Hand/finger/wrist",
    2: "Foot/toe/ankle",
    3: "Arm",
    4: "Leg",
    5: "Chest/Abdomen/flank",
    6: "Back/Buttock",
    7: "Face",
    8: "Neck",
    9: "Genital and peri-genital",
    10: "Anal",
    11: "Scalp",
}

DISEASES = {
    0: "Unknown",
    1: "Varicella (chickenpox)",
    2: "Herpes zoster (shingles)",
    3: "Measles",
    4: "Herpes - extra-genital",
    5: "Herpes - genital",
    6: "Syphilis primary or congenital",
    7: "Syphilis secondary",
    8: "Erythema Migrans",
    9: "Healed Scar",
    10: "Acne",
    11: "Molluscum",
    12: "Scabies",
    13: "Hives, urticaria",
    14: "Skin cancer",
    15: "Tularemia",
    16: "Blastomycosis",
    17: "Hand foot and mouth disease",
    18: "Impetigo or ecthyma",
    19: "Bed bug bites",
    20: "Other insect bites",
    21: "Genital warts (HPV)",
    22: "Furunculosis or early abscesses",
    23: "Folliculitis (standard bacterial)",
    24: "Miliaria",
    25: "Tuberculosis",
    26: "BCG vaccination",
    27: "Lymphangioma circumscriptum",
    28: "Spider bite",
    29: "Herpes gestationis",
    30: "Donovanosis",
    31: "Behcet's",
    32: "Leishmaniasis",
    33: "Chancroid",
    34: "Erythema multiforme",
    35: "Toxoplasmosis",
    36: "Histoplasmosis",
    37: "Rickettsia Akari",
    38: "Cryptococcus",
    39: "Degos",
    40: "Rickettsia parkeri",
    41: "Pityriasis rosea",
    42: "Psoriasis (guttate)",
    43: "Other folliculitis",
    44: "Other mycobacterial infections",
    45: "Bartonella",
    46: "PLEVA",
    47: "Other rickettsia or scrub typhus",
    48: "Melioidosis",
    49: "Lichen Planus",
    50: "Buruli Ulcer",
    51: "Talaromyces marneffei",
    52: "Coccidioidomycosis",
    53: "Paracoccidioidomycosis",
    54: "Sporotrichosis",
    55: "Fusarium",
    56: "Leukemic Cutis",
    57: "Eczema",
    58: "Roseola",
    59: "Perforating Dermatoses",
    60: "Disseminated Gonorrhea",
    61: "Dermatitis herpetiformis",
    62: "Prurigo Nodularis",
    63: "Nipple disorder",
    64: "Drug Eruption",
    65: "Bullous Pemphigoid",
    66: "Dermatofibroma",
    67: "Plain skin (no disease)",
    68: "Nipple (no disease)",
    69: "Genital skin (no disease)",
    70: "Anal area (no disease)",
    71: "Oral lips (no disease)",
    72: "Nose (no disease)",
    73: "Scalp with hair (no disease)",
    74: "Beard (no disease)",
    75: "Hemorrhoid",
    76: "Anal (no disease)",
    77: "Freckled skin (no disease)",
    78: "Mole (no disease)",
    79: "Pyogenic granuloma",
    80: "Janeway lesions",
    81: "Palm (no disease)",
    82: "Buttock (no disease)",
    83: "Teeth (no disease)",
    84: "Teeth (caries)",
    85: "Anthrax",
    86: "Malakoplakia",
    87: "Mpox",
}

MPOX = 87
UNKNOWN = 0

# No canonical order is asserted between the two published listings.
STAGES = (
    "macule",
    "papule",
    "vesicle",
    "pustule",
    "umbilicated pustule",
    "ulceration",
    "crusting",
    "scab",
    "scar",
)

AGE_GROUPS = ("adult", "child")
GENDERS = ("male", "female", "unknown")

# Diseases whose lesions are rendered with mpox-like appearance (visual mimics).
MIMICS = (1, 4, 11, 17, 18, 23, 43, 58)
