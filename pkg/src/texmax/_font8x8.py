"""8x8 monochrome glyphs for printable ASCII (0x20-0x7E).

Rasterized once from DejaVu Sans Mono Bold and frozen here so rendering never
depends on system fonts. Each glyph is 8 row bytes, MSB is the leftmost pixel.
"""

FIRST_CODE = 0x20

GLYPHS = (
    bytes.fromhex("0000000000000000"),  # ' '
    bytes.fromhex("0010101000100000"),  # '!'
    bytes.fromhex("006c6c0000000000"),  # '"'
    bytes.fromhex("00347e28fc580000"),  # '#'
    bytes.fromhex("003870781c7c1000"),  # '$'
    bytes.fromhex("00f0f06c1e1e0000"),  # '%'
    bytes.fromhex("00786076ce7c0000"),  # '&'
    bytes.fromhex("0010100000000000"),  # "'"
    bytes.fromhex("0818303030101800"),  # '('
    bytes.fromhex("2030181818103000"),  # ')'
    bytes.fromhex("0010385410000000"),  # '*'
    bytes.fromhex("0000107c10100000"),  # '+'
    bytes.fromhex("0000000000303000"),  # ','
    bytes.fromhex("0000003838000000"),  # '-'
    bytes.fromhex("0000000000300000"),  # '.'
    bytes.fromhex("000c081030204000"),  # '/'
    bytes.fromhex("007c6c7c6c380000"),  # '0'
    bytes.fromhex("00781818187c0000"),  # '1'
    bytes.fromhex("007c0c18307c0000"),  # '2'
    bytes.fromhex("007c1c3c0c7c0000"),  # '3'
    bytes.fromhex("001c3c4c7c0c0000"),  # '4'
    bytes.fromhex("0078607c0c780000"),  # '5'
    bytes.fromhex("007c786c643c0000"),  # '6'
    bytes.fromhex("007c0c1830300000"),  # '7'
    bytes.fromhex("007c6c7c4c7c0000"),  # '8'
    bytes.fromhex("007c4c6c3c780000"),  # '9'
    bytes.fromhex("0000301000300000"),  # ':'
    bytes.fromhex("0000301000303000"),  # ';'
    bytes.fromhex("00000c7078040000"),  # '<'
    bytes.fromhex("0000007c7c000000"),  # '='
    bytes.fromhex("0000601c3c400000"),  # '>'
    bytes.fromhex("007c0c1810300000"),  # '?'
    bytes.fromhex("007c44beb6dc7c00"),  # '@'
    bytes.fromhex("0038386c7cc60000"),  # 'A'
    bytes.fromhex("007c6c7c467c0000"),  # 'B'
    bytes.fromhex("003c6060603c0000"),  # 'C'
    bytes.fromhex("007c6c646c780000"),  # 'D'
    bytes.fromhex("007c6078607c0000"),  # 'E'
    bytes.fromhex("007c607c60600000"),  # 'F'
    bytes.fromhex("007c606c643c0000"),  # 'G'
    bytes.fromhex("006c6c7c6c6c0000"),  # 'H'
    bytes.fromhex("007c1010107c0000"),  # 'I'
    bytes.fromhex("003c0c0c0c780000"),  # 'J'
    bytes.fromhex("004c78786c4c0000"),  # 'K'
    bytes.fromhex("00606060607c0000"),  # 'L'
    bytes.fromhex("00ecfcfcc4c40000"),  # 'M'
    bytes.fromhex("006474545c4c0000"),  # 'N'
    bytes.fromhex("007c4c446c7c0000"),  # 'O'
    bytes.fromhex("007c647c60600000"),  # 'P'
    bytes.fromhex("007c4c446c7c0c00"),  # 'Q'
    bytes.fromhex("007c6c786c660000"),  # 'R'
    bytes.fromhex("007c603c0c7c0000"),  # 'S'
    bytes.fromhex("007c101010100000"),  # 'T'
    bytes.fromhex("004444444c7c0000"),  # 'U'
    bytes.fromhex("00446c6c38380000"),  # 'V'
    bytes.fromhex("00c6d67c6c6c0000"),  # 'W'
    bytes.fromhex("006c3838386c0000"),  # 'X'
    bytes.fromhex("006c7c3810100000"),  # 'Y'
    bytes.fromhex("007c1c38707c0000"),  # 'Z'
    bytes.fromhex("1830303030303800"),  # '['
    bytes.fromhex("0060203018080400"),  # '\\'
    bytes.fromhex("3018181818183800"),  # ']'
    bytes.fromhex("00384c0000000000"),  # '^'
    bytes.fromhex("00000000000000fe"),  # '_'
    bytes.fromhex("2010000000000000"),  # '`'
    bytes.fromhex("00007c3c6c7c0000"),  # 'a'
    bytes.fromhex("40607c6c647c0000"),  # 'b'
    bytes.fromhex("00003c60603c0000"),  # 'c'
    bytes.fromhex("040c7c6c4c7c0000"),  # 'd'
    bytes.fromhex("00003c6c7c7c0000"),  # 'e'
    bytes.fromhex("1c307c3030300000"),  # 'f'
    bytes.fromhex("00007c6c4c7c0c78"),  # 'g'
    bytes.fromhex("40607c6c6c6c0000"),  # 'h'
    bytes.fromhex("18007818187c0000"),  # 'i'
    bytes.fromhex("1800781818181870"),  # 'j'
    bytes.fromhex("40606c78786c0000"),  # 'k'
    bytes.fromhex("70303030301c0000"),  # 'l'
    bytes.fromhex("0000fcd4d6d60000"),  # 'm'
    bytes.fromhex("00007c6c6c6c0000"),  # 'n'
    bytes.fromhex("0000386c4c7c0000"),  # 'o'
    bytes.fromhex("00007c6c647c6060"),  # 'p'
    bytes.fromhex("00007c6c4c7c0c0c"),  # 'q'
    bytes.fromhex("00003c3020200000"),  # 'r'
    bytes.fromhex("00007c603c7c0000"),  # 's'
    bytes.fromhex("00307c30303c0000"),  # 't'
    bytes.fromhex("00006c6c6c7c0000"),  # 'u'
    bytes.fromhex("0000446c38380000"),  # 'v'
    bytes.fromhex("0000c6d67c6c0000"),  # 'w'
    bytes.fromhex("00006c38386c0000"),  # 'x'
    bytes.fromhex("0000446c38383060"),  # 'y'
    bytes.fromhex("00007c18307c0000"),  # 'z'
    bytes.fromhex("0c1810703010180c"),  # '{'
    bytes.fromhex("1010101010101010"),  # '|'
    bytes.fromhex("6030101c18103060"),  # '}'
    bytes.fromhex("0000007408000000"),  # '~'
)

# substituted for anything outside the table
FALLBACK = bytes.fromhex("00fe8282828282fe")
