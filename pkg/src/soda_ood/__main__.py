import sys

from soda_ood.cli import main

sys.exit(main())
