"""Pinned emoji-to-text table.

Covers the emoji most frequent in crisis-related tweets. Codepoints inside
the emoji blocks but absent from this table are dropped during
normalization so output stays deterministic across releases.
"""

EMOJI_NAMES: dict[str, str] = {
    "\U0001F600": "grinning_face",
    "\U0001F601": "beaming_face_with_smiling_eyes",
    "\U0001F602": "face_with_tears_of_joy",
    "\U0001F603": "grinning_face_with_big_eyes",
    "\U0001F604": "grinning_face_with_smiling_eyes",
    "\U0001F605": "grinning_face_with_sweat",
    "\U0001F609": "winking_face",
    "\U0001F60A": "smiling_face_with_smiling_eyes",
    "\U0001F60D": "smiling_face_with_heart_eyes",
    "\U0001F610": "neutral_face",
    "\U0001F614": "pensive_face",
    "\U0001F622": "crying_face",
    "\U0001F62D": "loudly_crying_face",
    "\U0001F628": "fearful_face",
    "\U0001F630": "anxious_face_with_sweat",
    "\U0001F631": "face_screaming_in_fear",
    "\U0001F633": "flushed_face",
    "\U0001F637": "face_with_medical_mask",
    "\U0001F912": "face_with_thermometer",
    "\U0001F915": "face_with_head_bandage",
    "\U0001F922": "nauseated_face",
    "\U0001F92E": "face_vomiting",
    "\U0001F975": "hot_face",
    "\U0001F976": "cold_face",
    "\U0001F97A": "pleading_face",
    "\U0001F4A4": "zzz",
    "\U0001F620": "angry_face",
    "\U0001F621": "enraged_face",
    "\U0001F92C": "face_with_symbols_on_mouth",
    "\U0001F914": "thinking_face",
    "\U0001F92F": "exploding_head",
    "\U0001F64F": "folded_hands",
    "\U0001F64C": "raising_hands",
    "\U0001F44F": "clapping_hands",
    "\U0001F44D": "thumbs_up",
    "\U0001F44E": "thumbs_down",
    "\U0001F4AA": "flexed_biceps",
    "\U0001F91D": "handshake",
    "\U0000270C": "victory_hand",
    "\U0000270A": "raised_fist",
    "\U0000261D": "index_pointing_up",
    "\U0001F447": "backhand_index_pointing_down",
    "\U0001F440": "eyes",
    "\U0001F480": "skull",
    "\U00002620": "skull_and_crossbones",
    "\U00002764": "red_heart",
    "\U0001F494": "broken_heart",
    "\U0001F499": "blue_heart",
    "\U0001F49A": "green_heart",
    "\U0001F525": "fire",
    "\U0001F4A7": "droplet",
    "\U0001F30A": "water_wave",
    "\U0001F327": "cloud_with_rain",
    "\U000026C8": "cloud_with_lightning_and_rain",
    "\U0001F32A": "tornado",
    "\U0001F300": "cyclone",
    "\U0001F32B": "fog",
    "\U0001F328": "cloud_with_snow",
    "\U00002744": "snowflake",
    "\U00002614": "umbrella_with_rain_drops",
    "\U000026A1": "high_voltage",
    "\U00002600": "sun",
    "\U0001F30B": "volcano",
    "\U000026F0": "mountain",
    "\U0001F3D4": "snow_capped_mountain",
    "\U0001F30D": "globe_showing_europe_africa",
    "\U0001F30E": "globe_showing_americas",
    "\U0001F30F": "globe_showing_asia_australia",
    "\U0001F4A8": "dashing_away",
    "\U0001F32D": "hot_dog",
    "\U000026A0": "warning",
    "\U0001F6A8": "police_car_light",
    "\U0001F691": "ambulance",
    "\U0001F692": "fire_engine",
    "\U0001F693": "police_car",
    "\U0001F3E5": "hospital",
    "\U0001F198": "sos_button",
    "\U0001F4E2": "loudspeaker",
    "\U0001F4E3": "megaphone",
    "\U000026D1": "rescue_workers_helmet",
    "\U0001F9EF": "fire_extinguisher",
    "\U0001F321": "thermometer",
    "\U0001F9A0": "microbe",
    "\U0001F489": "syringe",
    "\U0001F48A": "pill",
    "\U0001F3E0": "house",
    "\U0001F3DA": "derelict_house",
    "\U0001F389": "party_popper",
    "\U00002728": "sparkles",
    "\U00002B50": "star",
    "\U0001F31F": "glowing_star",
    "\U00002705": "check_mark_button",
    "\U0000274C": "cross_mark",
    "\U00002757": "exclamation_mark",
    "\U00002753": "question_mark",
    "\U0001F4AF": "hundred_points",
    "\U0001F4F0": "newspaper",
    "\U0001F4F7": "camera",
    "\U0001F4F8": "camera_with_flash",
    "\U0001F4F9": "video_camera",
    "\U0001F3A5": "movie_camera",
    "\U0001F4CD": "round_pushpin",
    "\U0001F5FA": "world_map",
    "\U000023F0": "alarm_clock",
    "\U0001F6F0": "satellite",
    "\U0001F4E1": "satellite_antenna",
    "\U0001F694": "oncoming_police_car",
    "\U0001F6C1": "bathtub",
    "\U0001F9B7": "tooth",
    "\U0001F929": "star_struck",
    "\U0001F923": "rolling_on_the_floor_laughing",
    "\U0001F972": "smiling_face_with_tear",
    "\U0001F970": "smiling_face_with_hearts",
    "\U0001F607": "smiling_face_with_halo",
    "\U0001F606": "grinning_squinting_face",
    "\U0001F61E": "disappointed_face",
    "\U0001F616": "confounded_face",
    "\U0001F62B": "tired_face",
    "\U0001F634": "sleeping_face",
}

# Single-codepoint entries only participate in the scan table.
SINGLE_CODEPOINT_NAMES: dict[int, str] = {
    ord(k): v for k, v in EMOJI_NAMES.items() if len(k) == 1
}

# Codepoint blocks treated as emoji/emoji-modifier content. Characters in
# these blocks without a table entry are dropped.
EMOJI_BLOCKS: tuple[tuple[int, int], ...] = (
    (0x1F000, 0x1F0FF),   # mahjong / playing cards
    (0x1F100, 0x1F1FF),   # enclosed alphanumerics + regional indicators
    (0x1F300, 0x1F5FF),   # misc symbols and pictographs
    (0x1F600, 0x1F64F),   # emoticons
    (0x1F680, 0x1F6FF),   # transport and map
    (0x1F700, 0x1F77F),   # alchemical
    (0x1F900, 0x1F9FF),   # supplemental symbols
    (0x1FA00, 0x1FAFF),   # extended-A
    (0x2600, 0x26FF),     # misc symbols
    (0x2700, 0x27BF),     # dingbats
    (0x2B00, 0x2BFF),     # misc symbols and arrows (stars)
    (0x2190, 0x21FF),     # arrows used as emoji with VS16
    (0x2300, 0x23FF),     # misc technical (clocks, media controls)
    (0x25A0, 0x25FF),     # geometric shapes
    (0xFE00, 0xFE0F),     # variation selectors
    (0x1F3FB, 0x1F3FF),   # skin tone modifiers
    (0x200D, 0x200D),     # zero-width joiner
    (0x20E3, 0x20E3),     # combining keycap
)


def is_emoji_codepoint(cp: int) -> bool:
    for lo, hi in EMOJI_BLOCKS:
        if lo <= cp <= hi:
            return True
    return False
