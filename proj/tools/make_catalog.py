"""Writes data/catalog.tsv: head nouns per department plus modifier combinations."""
import random
import sys

DEPARTMENTS = {
    "produce": (["fresh", "organic", "baby", "red", "green", "sweet", "ripe", "yellow"],
                [("apples", ["apple"]), ("bananas", ["banana"]), ("garlic", ["garlic bulbs"]),
                 ("onions", ["onion"]), ("carrots", ["carrot sticks"]), ("spinach", ["spinach leaves"]),
                 ("tomatoes", ["tomato"]), ("peppers", ["bell peppers"]), ("grapes", ["grape bunch"]),
                 ("potatoes", ["spuds"]), ("lettuce", ["lettuce head"]), ("pears", ["pear"]),
                 ("mushrooms", ["button mushrooms"]), ("cucumbers", ["cucumber"])]),
    "dairy": (["whole", "skim", "low fat", "organic", "greek", "unsalted", "shredded", "vanilla"],
              [("milk", ["dairy milk"]), ("yogurt", ["yoghurt"]), ("butter", ["butter sticks"]),
               ("cheese", ["cheese block"]), ("cream", ["heavy cream"]), ("cottage cheese", ["curd cheese"]),
               ("sour cream", ["soured cream"]), ("mozzarella", ["mozzarella cheese"]),
               ("cheddar", ["cheddar cheese"])]),
    "bakery": (["whole wheat", "sourdough", "white", "multigrain", "mini", "glazed"],
               [("bread", ["loaf of bread"]), ("bagels", ["bagel"]), ("muffins", ["muffin"]),
                ("rolls", ["dinner rolls"]), ("tortillas", ["wraps"]), ("croissants", ["croissant"]),
                ("donuts", ["doughnuts"])]),
    "snacks": (["salted", "roasted", "spicy", "honey", "sea salt", "cheesy"],
               [("sunflower seeds", ["sunflower kernels"]), ("almonds", ["almond nuts"]),
                ("peanuts", ["groundnuts"]), ("pretzels", ["pretzel twists"]), ("potato chips", ["crisps"]),
                ("popcorn", ["popped corn"]), ("crackers", ["cracker packs"]), ("cashews", ["cashew nuts"])]),
    "household": (["disposable", "scented", "unscented", "heavy duty", "reusable", "extra large"],
                  [("wipes", ["wet wipes"]), ("paper towels", ["kitchen towels"]), ("trash bags", ["garbage bags"]),
                   ("sponges", ["scrub sponges"]), ("napkins", ["serviettes"]), ("gloves", ["rubber gloves"]),
                   ("candles", ["tea lights"])]),
    "beverages": (["sparkling", "diet", "iced", "cold brew", "orange", "lemon"],
                  [("water", ["bottled water"]), ("soda", ["soda pop"]), ("tea", ["tea bags"]),
                   ("coffee", ["ground coffee"]), ("juice", ["fruit juice"]), ("lemonade", ["lemon drink"])]),
    "meat": (["ground", "boneless", "smoked", "lean", "sliced", "grilled"],
             [("chicken breast", ["chicken breasts"]), ("beef", ["beef mince"]), ("turkey", ["turkey slices"]),
              ("bacon", ["bacon strips"]), ("sausages", ["bangers"]), ("ham", ["ham slices"]),
              ("pork chops", ["pork cutlets"])]),
    "pantry": (["brown", "basmati", "extra virgin", "wholegrain", "instant", "canned"],
               [("rice", ["rice grains"]), ("pasta", ["noodles"]), ("olive oil", ["cooking oil"]),
                ("flour", ["plain flour"]), ("oats", ["rolled oats"]), ("beans", ["kidney beans"]),
                ("sugar", ["cane sugar"]), ("soup", ["soup cans"])]),
    "frozen": (["frozen", "family size", "thin crust", "mixed", "microwave"],
               [("pizza", ["pizzas"]), ("peas", ["green peas"]), ("waffles", ["waffle"]),
                ("ice cream", ["gelato"]), ("fries", ["french fries"]), ("dumplings", ["potstickers"])]),
    "personal care": (["fluoride", "travel size", "herbal", "sensitive", "mint"],
                      [("toothpaste", ["tooth paste"]), ("shampoo", ["hair wash"]), ("soap", ["soap bars"]),
                       ("deodorant", ["antiperspirant"]), ("lotion", ["body lotion"]),
                       ("mouthwash", ["mouth rinse"])]),
    "baby": (["newborn", "overnight", "gentle", "organic baby"],
             [("diapers", ["nappies"]), ("baby food", ["infant food"]), ("formula", ["infant formula"]),
              ("baby wipes", ["nursery wipes"])]),
    "pet": (["dry", "grain free", "puppy", "kitten"],
            [("dog food", ["dog kibble"]), ("cat food", ["cat kibble"]), ("cat litter", ["kitty litter"]),
             ("dog treats", ["dog biscuits"])]),
    "breakfast": (["frosted", "crunchy", "maple", "cinnamon"],
                  [("cereal", ["breakfast cereal"]), ("granola", ["granola clusters"]),
                   ("pancake mix", ["pancake batter"]), ("syrup", ["pancake syrup"]), ("eggs", ["dozen eggs"])]),
}

# Products named in the README example utterance.
PINNED = [("fresh garlic", "produce", ["fresh garlic cloves"]),
          ("disposable wipes", "household", ["disposable wet wipes"])]


def main(path):
    rng = random.Random(11)
    products, surfaces = [], set()

    def add(name, dept, synonyms):
        forms = [name] + synonyms
        if any(f in surfaces for f in forms):
            return
        surfaces.update(forms)
        products.append((name, dept, synonyms))

    for name, dept, syns in PINNED:
        add(name, dept, syns)
    for dept, (modifiers, heads) in DEPARTMENTS.items():
        for head, syns in heads:
            add(head, dept, syns)
        combos = [(m, h, s) for m in modifiers for h, s in heads]
        rng.shuffle(combos)
        for m, h, s in combos[: len(heads) + 3]:
            add(f"{m} {h}", dept, [f"{m} {s[0]}"])
    with open(path, "w") as f:
        f.write("# canonical\tdepartment\tsynonyms (comma separated)\n")
        for name, dept, syns in products:
            f.write(f"{name}\t{dept}\t{','.join(syns)}\n")
    print(f"{len(products)} products -> {path}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "data/catalog.tsv")
